"""Interval histograms and the sliding window used for live monitoring."""
import numpy as np

from gatedspad import (DetectorParams, SimConfig, SlidingWindow, build_histogram,
                       extract_intervals, merge, simulate_stream)

p = DetectorParams(mu=0.08, eta=0.15, p_dark=2e-4, p0=0.06, tau_s=1.5e-6, gate_period_s=1e-6)
gates = simulate_stream(SimConfig(p, n_detections=100_001, seed=3)).gates

whole = build_histogram(extract_intervals(gates), m_max=500)
print(f"{whole.total} intervals, {whole.overflow} beyond m_max, "
      f"{int(whole.zero_bins.sum())} empty bins")

# two files stitched together: the second one starts at the bridging detection
half = gates.size // 2
stitched = merge(build_histogram(extract_intervals(gates[:half + 1]), 500),
                 build_histogram(extract_intervals(gates[half:]), 500))
print("stitched halves equal the whole:", stitched == whole)

window = SlidingWindow(capacity=30_000, m_max=500)
window.extend(extract_intervals(gates))
print(f"window holds the last {len(window)} of {window.pushed} intervals;",
      "incremental == recomputed:", window.snapshot() == window.recompute())
