"""Live monitoring: a sliding window refitted every N/10 new intervals.

Halfway through, the afterpulse amplitude triples (say the bias drifted);
the reported P_T follows within a window or two.
"""
import numpy as np

from gatedspad import DetectorParams, FitOptions, SimConfig, simulate_stream
from gatedspad.monitor import run_monitor
from gatedspad.pipeline import RunConfig

before = DetectorParams(mu=0.08, eta=0.15, p_dark=2e-4, p0=0.06, tau_s=1.5e-6,
                        gate_period_s=1e-6)
after = DetectorParams(mu=0.08, eta=0.15, p_dark=2e-4, p0=0.18, tau_s=1.5e-6,
                       gate_period_s=1e-6)
a = simulate_stream(SimConfig(before, n_detections=120_000, seed=1)).gates
b = simulate_stream(SimConfig(after, n_detections=120_000, seed=2)).gates
gates = np.concatenate((a, a[-1] + b))

config = RunConfig(gate_frequency_hz=1e6, fit=FitOptions(pin_p_dark=2e-4), window=30_000)
for report in run_monitor(np.array_split(gates, 40), config):
    f = report["fit"]
    mark = "  <- step" if report["intervals_seen"] - a.size in range(0, 3000) else ""
    print(f"{report['intervals_seen']:>7} intervals  P_T = {f['p_total']:.4f}  "
          f"mu*eta = {f['mu_eta']:.5f}{mark}")
