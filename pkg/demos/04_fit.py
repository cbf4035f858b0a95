"""Fitting a simulated run and comparing with the area-ratio estimate.

mu*eta and the dark-count probability only enter through q, so one of them
has to be pinned for the other to be reported.
"""
from gatedspad import (DetectorParams, FitOptions, SimConfig, area_ratio_afterpulse,
                       build_histogram, extract_intervals, fit_model, simulate_stream,
                       total_afterpulse)

truth = DetectorParams(mu=0.08, eta=0.15, p_dark=2e-4, p0=0.0609, tau_s=1.5e-6,
                       gate_period_s=1e-6)
hist = build_histogram(extract_intervals(
    simulate_stream(SimConfig(truth, n_detections=2_000_000, seed=11))))

free = fit_model(hist, truth.gate_period_s)
print(f"free fit:   q = {free.q_hat:.6f} (true {truth.q:.6f}), mu*eta not reported")

opts = FitOptions(pin_p_dark=2e-4, bootstrap=20)
fit = fit_model(hist, truth.gate_period_s, opts)
se = fit.std_errors
print(f"pinned P_d: mu*eta = {fit.mu_eta_hat:.5f} +- {se['mu_eta']:.5f} (true {truth.mu_eta:.5f})")
print(f"            P_T    = {fit.p_total_hat:.4f} +- {se['p_total']:.4f} "
      f"(true {total_afterpulse(truth):.4f})")
print(f"            tau    = {fit.tau_s * 1e6:.3f} us (true {truth.tau_s * 1e6:.3f}), "
      f"R^2 = {fit.r_squared:.5f}")
print(f"area ratio: P_T    = {area_ratio_afterpulse(hist, options=opts):.4f}")
