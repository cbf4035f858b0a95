"""The interval distribution of a gated detector, with and without afterpulsing.

Without afterpulses the gaps between detections are geometric, a straight
line on a log scale. A trap released over a few gates lifts the first bins
above that line.
"""
import numpy as np

from gatedspad import DetectorParams, PmfMode, interval_pmf, total_afterpulse

clean = DetectorParams(mu=0.08, eta=0.15, p_dark=2e-4, p0=0.0, tau_s=1.5e-6, gate_period_s=1e-6)
noisy = DetectorParams(mu=0.08, eta=0.15, p_dark=2e-4, p0=0.0609, tau_s=1.5e-6,
                       gate_period_s=1e-6)

m = np.array([1, 2, 3, 5, 10, 20, 50, 100, 200])
print(f"q = {noisy.q:.6f}, total afterpulse probability = {total_afterpulse(noisy):.4f}\n")
print(f"{'m':>4} {'no traps':>12} {'with traps':>12} {'ratio':>7} {'2nd order err':>14}")
a, b = interval_pmf(clean, m), interval_pmf(noisy, m)
approx = interval_pmf(noisy, m, PmfMode.SECOND_ORDER)
for row in zip(m, a, b, b / a, np.abs(approx / b - 1)):
    print("{:>4d} {:>12.4e} {:>12.4e} {:>7.3f} {:>14.1e}".format(*row))
