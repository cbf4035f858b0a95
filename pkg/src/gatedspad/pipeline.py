"""Event stream to report: the characterization pipeline shared by the CLI
and the monitor."""
from __future__ import annotations

import dataclasses
import datetime as _dt
import logging
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .fit import (
    DelayScanProfile,
    FitOptions,
    InsufficientStatisticsError,
    area_ratio_afterpulse,
    decompose_efficiency,
    effective_gate_width,
    fit_model,
)
from .files import SCHEMA_VERSION
from .intervals import DEFAULT_M_MAX, IntervalHistogram, build_histogram, extract_intervals

log = logging.getLogger(__name__)

__all__ = [
    "RunConfig",
    "MIN_INTERVALS",
    "WARN_INTERVALS",
    "characterize_histogram",
    "characterize_stream",
    "plot_table",
    "decomposition_report",
    "gate_width_report",
]

MIN_INTERVALS = 1_000
WARN_INTERVALS = 3_000


@dataclass(frozen=True)
class RunConfig:
    gate_frequency_hz: float
    mu_known: float | None = None
    eta_nominal: float | None = None
    gate_width_eff_s: float | None = None
    gate_width_nominal_s: float | None = None
    fit: FitOptions = field(default_factory=FitOptions)
    window: int = 30_000
    refresh: int | None = None
    m_max: int = DEFAULT_M_MAX
    phase_tolerance: float = 0.25
    area_ratio: bool = True

    def __post_init__(self):
        if not self.gate_frequency_hz > 0:
            raise ValueError("gate_frequency_hz must be > 0")
        if self.mu_known is not None and not self.mu_known > 0:
            raise ValueError("mu must be > 0")
        if (self.gate_width_eff_s is None) != (self.gate_width_nominal_s is None):
            raise ValueError("give both the effective and the nominal gate width, or neither")

    @property
    def gate_period_s(self) -> float:
        return 1.0 / self.gate_frequency_hz

    @property
    def refresh_every(self) -> int:
        return self.refresh or max(1, self.window // 10)

    @property
    def mu_effective(self) -> float | None:
        """Known mu rescaled by the measured effective gate width."""
        if self.mu_known is None:
            return None
        if self.gate_width_eff_s is None:
            return self.mu_known
        return self.mu_known * self.gate_width_eff_s / self.gate_width_nominal_s

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        d["fit"]["mode"] = self.fit.mode.value
        return d


def _derived(config: RunConfig, result) -> dict:
    out = {"mu_effective": config.mu_effective}
    mu = config.mu_effective
    if result.mu_eta_hat is not None:
        if mu is not None:
            out["eta"] = result.mu_eta_hat / mu
        elif config.eta_nominal is not None:
            out["mu"] = result.mu_eta_hat / config.eta_nominal
    return out


def _histogram_summary(hist: IntervalHistogram) -> dict:
    m = hist.gaps
    total_in = int(hist.counts.sum())
    return {
        "total": hist.total,
        "overflow": hist.overflow,
        "m_max": hist.m_max,
        "nonzero_bins": int((hist.counts > 0).sum()),
        "last_bin_k_min": hist.last_bin_with(5),
        "mean_gap_in_range": float((m * hist.counts).sum() / total_in) if total_in else None,
    }


def characterize_histogram(hist: IntervalHistogram, config: RunConfig,
                           provenance: dict | None = None, *, wall_clock: bool = True):
    """Fit ``hist`` and assemble a report dictionary.

    Returns ``(report, fit_result)``.
    """
    if hist.total < MIN_INTERVALS:
        raise InsufficientStatisticsError(
            f"{hist.total} intervals; at least {MIN_INTERVALS} are needed")
    warnings = []
    if hist.total < WARN_INTERVALS:
        warnings.append(f"only {hist.total} intervals; estimates below "
                        f"{WARN_INTERVALS} are noisy")
    if hist.overflow:
        warnings.append(f"{hist.overflow} intervals exceed m_max = {hist.m_max}")
    result = fit_model(hist, config.gate_period_s, config.fit)
    if result.at_bounds:
        warnings.append(f"fit parameters at bounds: {', '.join(result.at_bounds)}")
    report = {
        "schema_version": SCHEMA_VERSION,
        "tool": {"name": "gatedspad", "version": __version__},
        "config": config.echo(),
        "provenance": provenance or {},
        "histogram": _histogram_summary(hist),
        "fit": result.as_dict(),
        "derived": _derived(config, result),
        "warnings": warnings,
    }
    if config.area_ratio:
        try:
            report["area_ratio_p_total"] = area_ratio_afterpulse(hist, options=config.fit)
        except InsufficientStatisticsError as exc:
            report["area_ratio_p_total"] = None
            warnings.append(f"area ratio unavailable: {exc}")
    for w in warnings:
        log.warning(w)
    if wall_clock:
        report["generated_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    return report, result


def characterize_stream(stream, config: RunConfig, provenance: dict | None = None,
                        **kw):
    gaps = extract_intervals(stream)
    if gaps.size < MIN_INTERVALS:
        raise InsufficientStatisticsError(
            f"{len(stream)} detections give {gaps.size} intervals; "
            f"at least {MIN_INTERVALS} are needed")
    hist = build_histogram(gaps, config.m_max)
    report, result = characterize_histogram(hist, config, provenance, **kw)
    return report, result, hist


def plot_table(hist: IntervalHistogram, result):
    """Rows of (m, empirical pmf, model pmf, log10 residual) over the fitted range."""
    m = np.arange(1, int(result.m.max()) + 1)
    emp = hist.counts[m - 1] / hist.total
    model = np.exp(result.log_pmf(m))
    with np.errstate(divide="ignore"):
        resid = np.where(emp > 0, np.log10(emp) - np.log10(model), np.nan)
    header = ["m", "empirical_pmf", "model_pmf", "residual_log10"]
    return header, list(zip(m.tolist(), emp.tolist(), model.tolist(), resid.tolist()))


def decomposition_report(runs, labels=None) -> dict:
    """Report for :func:`~gatedspad.fit.decompose_efficiency` over ``(mu, q)`` runs."""
    runs = list(runs)
    res = decompose_efficiency(runs)
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": {"name": "gatedspad", "version": __version__},
        "runs": [{"mu": mu, "q": q, "source": lab}
                 for (mu, q), lab in zip(runs, labels or [None] * len(runs))],
        "decomposition": res.as_dict(),
    }


def gate_width_report(delay_s, counts, nominal_width_s: float | None = None) -> dict:
    profile = DelayScanProfile.from_counts(delay_s, counts)
    width = effective_gate_width(profile)
    out = {
        "schema_version": SCHEMA_VERSION,
        "tool": {"name": "gatedspad", "version": __version__},
        "n_samples": int(profile.delay_s.size),
        "effective_width_s": width,
    }
    if nominal_width_s:
        out["nominal_width_s"] = nominal_width_s
        out["mu_correction_factor"] = width / nominal_width_s
    return out
