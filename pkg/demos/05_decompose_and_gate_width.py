"""Separating efficiency from dark counts, and correcting mu for the gate shape.

Runs at several known mean photon numbers put ln q on a straight line in mu:
the slope is -eta and the intercept ln(1 - P_d). The effective gate width
from a delay scan rescales the nominal mu.
"""
import numpy as np

from gatedspad import (DelayScanProfile, DetectorParams, SimConfig, build_histogram,
                       decompose_efficiency, effective_gate_width, extract_intervals,
                       fit_model, simulate_stream, spawn_seeds)

runs = []
for mu, seed in zip((0.04, 0.08, 0.16, 0.32), spawn_seeds(5, 4)):
    p = DetectorParams(mu=mu, eta=0.15, p_dark=2e-4, p0=0.06, tau_s=1.5e-6, gate_period_s=1e-6)
    hist = build_histogram(extract_intervals(
        simulate_stream(SimConfig(p, n_detections=2_000_000, seed=seed))))
    runs.append((mu, fit_model(hist, 1e-6).q_hat))
res = decompose_efficiency(runs)
print(f"eta = {res.eta_hat:.4f} +- {res.eta_stderr:.1e}, "
      f"P_d = {res.p_dark_hat:.2e} +- {res.p_dark_stderr:.1e}")

# a smoothed 5 ns gate sampled every 100 ps
t = np.arange(-3e-9, 9e-9, 1e-10)
counts = 1000 / ((1 + np.exp(-(t - 0.3e-9) / 2e-10)) * (1 + np.exp((t - 4.5e-9) / 3e-10)))
width = effective_gate_width(DelayScanProfile.from_counts(t, counts))
print(f"effective width {width * 1e9:.2f} ns -> mu correction x{width / 5e-9:.3f}")
