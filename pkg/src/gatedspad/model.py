"""Closed-form distribution of the gap between consecutive detections of a
gated single-photon detector.

A gap of ``m`` gates means ``m - 1`` silent gates followed by a detection.
Photon arrivals are Poissonian with mean ``mu`` per gate, dark counts fire
independently with probability ``p_dark`` per gate, and afterpulsing follows
a single trap with exponential release, ``P_a(m) = p0 * exp(-m T / tau)``,
conditioned on the latest detection only.

All internal arithmetic uses the per-gate decay ``d = T / tau`` so that the
model never depends on absolute time units.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

__all__ = [
    "DetectorParams",
    "PmfMode",
    "NonNormalizableError",
    "afterpulse_prob",
    "no_count_prob",
    "survival_product_exact",
    "alpha",
    "beta",
    "beta_printed",
    "interval_pmf",
    "log_interval_pmf",
    "total_afterpulse",
    "geometric_slope",
    "one_minus_q",
    "total_afterpulse_from",
]

# below this per-gate decay the geometric closed forms lose too many digits
SMALL_DECAY = 1e-6


class NonNormalizableError(ValueError):
    """Raised when no photon or dark count can ever fire (q == 1)."""


class PmfMode(Enum):
    EXACT_PRODUCT = "exact"
    SECOND_ORDER = "second-order"

    @classmethod
    def parse(cls, value: "PmfMode | str") -> "PmfMode":
        if isinstance(value, cls):
            return value
        for mode in cls:
            if value in (mode.value, mode.name, mode.name.lower()):
                return mode
        raise ValueError(f"unknown pmf mode {value!r}")


@dataclass(frozen=True)
class DetectorParams:
    """Physical parameters of a gated detector.

    Parameters
    ----------
    mu : float
        Mean photon number per effective gate.
    eta : float
        Overall detection efficiency.
    p_dark : float
        Dark-count probability per gate.
    p0 : float
        Afterpulse amplitude.
    tau_s : float
        Detrapping lifetime in seconds.
    gate_period_s : float
        Gate period ``T`` in seconds.
    """

    mu: float
    eta: float
    p_dark: float
    p0: float
    tau_s: float
    gate_period_s: float

    def __post_init__(self):
        if not self.mu >= 0:
            raise ValueError(f"mu must be >= 0, got {self.mu}")
        if not 0 <= self.eta <= 1:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if not 0 <= self.p_dark <= 1:
            raise ValueError(f"p_dark must lie in [0, 1], got {self.p_dark}")
        if not 0 <= self.p0 < 1:
            raise ValueError(f"p0 must lie in [0, 1), got {self.p0}")
        if not self.tau_s > 0:
            raise ValueError(f"tau_s must be > 0, got {self.tau_s}")
        if not self.gate_period_s > 0:
            raise ValueError(f"gate_period_s must be > 0, got {self.gate_period_s}")

    @classmethod
    def from_decay(cls, *, mu_eta: float, p_dark: float = 0.0, p0: float = 0.0,
                   decay: float = 1.0, gate_period_s: float = 1.0,
                   mu: float | None = None) -> "DetectorParams":
        """Build parameters from the per-gate decay ``d = T / tau``.

        ``mu_eta`` is split as ``mu * eta``; when ``mu`` is omitted the
        efficiency is set to one.
        """
        if mu is None or mu == 0:
            mu, eta = mu_eta, 1.0
        else:
            eta = mu_eta / mu
        return cls(mu=mu, eta=eta, p_dark=p_dark, p0=p0,
                   tau_s=gate_period_s / decay, gate_period_s=gate_period_s)

    @classmethod
    def from_q(cls, q: float, *, p0: float = 0.0, decay: float = 1.0,
               gate_period_s: float = 1.0) -> "DetectorParams":
        """Parameters whose no-photon/no-dark probability per gate is ``q``."""
        if not 0 < q <= 1:
            raise ValueError(f"q must lie in (0, 1], got {q}")
        return cls.from_decay(mu_eta=-math.log(q), p0=p0, decay=decay,
                              gate_period_s=gate_period_s)

    @property
    def mu_eta(self) -> float:
        return self.mu * self.eta

    @property
    def decay(self) -> float:
        """Per-gate afterpulse decay ``T / tau``."""
        return self.gate_period_s / self.tau_s

    @property
    def q(self) -> float:
        return geometric_slope(self)

    def with_decay(self, decay: float) -> "DetectorParams":
        return replace(self, tau_s=self.gate_period_s / decay)


def _as_gates(m):
    arr = np.asarray(m)
    if not np.issubdtype(arr.dtype, np.integer):
        if np.any(arr != np.floor(arr)):
            raise ValueError("gate counts must be integers")
        arr = arr.astype(np.int64)
    if np.any(arr < 1):
        raise ValueError("gate counts start at m = 1 (first gate after a detection)")
    return arr


def _out(value, like):
    return float(value) if np.ndim(like) == 0 else value


def _geom_ratio(k, decay):
    """``(exp(-k d) - 1) / (exp(-d) - 1)``, i.e. ``sum_{j<k} exp(-j d)``."""
    return np.expm1(-k * decay) / np.expm1(-decay)


def afterpulse_prob(params: DetectorParams, m):
    """Afterpulse probability ``m`` gates after the latest detection."""
    mm = _as_gates(m)
    return _out(params.p0 * np.exp(-mm * params.decay), m)


def geometric_slope(params: DetectorParams) -> float:
    """Probability ``q`` that a gate sees neither a photon count nor a dark count."""
    return math.exp(-params.mu_eta) * (1.0 - params.p_dark)


def one_minus_q(params: DetectorParams) -> float:
    """``1 - q`` evaluated without cancellation for small ``mu * eta``."""
    return -math.expm1(-params.mu_eta) * (1.0 - params.p_dark) + params.p_dark


def no_count_prob(params: DetectorParams, m):
    mm = _as_gates(m)
    pa = params.p0 * np.exp(-mm * params.decay)
    return _out(geometric_slope(params) * (1.0 - pa), m)


def _log_survival_exact(m_max: int, p0: float, decay: float) -> np.ndarray:
    """``log prod_{x=1}^{m-1} (1 - P_a(x))`` for m = 1..m_max."""
    out = np.zeros(m_max)
    if p0 > 0 and m_max > 1:
        x = np.arange(1, m_max)
        np.cumsum(np.log1p(-p0 * np.exp(-x * decay)), out=out[1:])
    return out


def survival_product_exact(params: DetectorParams, m):
    """Probability that no afterpulse fired in the first ``m - 1`` gates."""
    mm = _as_gates(m)
    table = _log_survival_exact(int(np.max(mm)), params.p0, params.decay)
    return _out(np.exp(table[mm - 1]), m)


def _alpha(mm, p0, decay):
    if decay < SMALL_DECAY:
        return np.array([math.fsum(p0 * math.exp(-x * decay) for x in range(1, k))
                         for k in np.ravel(mm)]).reshape(np.shape(mm))
    r = math.exp(-decay)
    return p0 * r * _geom_ratio(mm - 1, decay)


def _beta(mm, p0, decay):
    if decay < SMALL_DECAY:
        def pairs(k):
            terms = [p0 * math.exp(-x * decay) for x in range(1, k)]
            s1 = math.fsum(terms)
            s2 = math.fsum(t * t for t in terms)
            return 0.5 * (s1 * s1 - s2)
        return np.array([pairs(k) for k in np.ravel(mm)]).reshape(np.shape(mm))
    mm = np.asarray(mm)
    if decay >= 1.0:
        # the published form only cancels badly as exp(-d) -> 1
        val = _beta_printed(mm.astype(float), p0, decay)
    else:
        r = math.exp(-decay)
        first = p0 * r * _geom_ratio(mm - 1, decay)
        # sum of squares: p0^2 r^2 (r^{2(m-1)} - 1) / (r^2 - 1)
        second = p0 * p0 * r * r * _geom_ratio(mm - 1, 2 * decay)
        # sum_{x<y} a_x a_y = ((sum a)^2 - sum a^2) / 2
        val = 0.5 * (first * first - second)
    return np.where(mm < 3, 0.0, val)


def _beta_printed(mm, p0, d):
    em1 = math.expm1(-d)
    lead = np.exp(-(mm + 1) * d) * np.expm1(-(mm - 2) * d) / em1
    tail = math.exp(-3 * d) * np.expm1(-2 * (mm - 2) * d) / math.expm1(-2 * d)
    return np.where(mm < 3, 0.0, p0 * p0 / em1 * (lead - tail))


def alpha(params: DetectorParams, m):
    """First-order expansion term, ``sum_{x=1}^{m-1} P_a(x)``."""
    mm = _as_gates(m)
    return _out(_alpha(mm, params.p0, params.decay), m)


def beta(params: DetectorParams, m):
    """Second-order expansion term, ``sum_{1<=x<y<=m-1} P_a(x) P_a(y)``."""
    mm = _as_gates(m)
    return _out(_beta(mm, params.p0, params.decay), m)


def beta_printed(params: DetectorParams, m):
    """The published closed form of the second-order term.

    Equal to :func:`beta`; it subtracts two nearly equal quantities when
    ``T / tau`` is small, so :func:`beta` only uses it for ``T / tau >= 1``.
    """
    mm = _as_gates(m)
    return _out(_beta_printed(mm.astype(float), params.p0, params.decay), m)


def _check_q(one_minus_q: float):
    if one_minus_q <= 0:
        raise NonNormalizableError(
            "q = 1: neither photons nor dark counts can fire, the interval "
            "distribution is not normalizable")


def log_interval_pmf(m, one_minus_q: float, p0: float, decay: float,
                     mode: PmfMode | str = PmfMode.EXACT_PRODUCT) -> np.ndarray:
    """Natural log of the interval pmf in the fitter's parameterization.

    Taking ``1 - q`` directly keeps full relative precision when ``mu*eta``
    is small. ``m`` must be an integer array of gate counts.
    """
    mode = PmfMode.parse(mode)
    mm = np.asarray(m, dtype=np.int64)
    _check_q(one_minus_q)
    q = 1.0 - one_minus_q
    pa = p0 * np.exp(-mm * decay)
    # 1 - q (1 - P_a) = (1 - q) + q P_a
    first = np.log(one_minus_q + q * pa)
    if q > 0:
        geo = (mm - 1) * math.log(q)
    else:
        geo = np.where(mm == 1, 0.0, -np.inf)
    if mode is PmfMode.EXACT_PRODUCT:
        table = _log_survival_exact(int(mm.max()), p0, decay)
        surv = table[mm - 1]
    else:
        s = 1.0 - _alpha(mm, p0, decay) + _beta(mm, p0, decay)
        with np.errstate(divide="ignore", invalid="ignore"):
            surv = np.log(np.clip(s, 0.0, None))
    return first + geo + surv


def interval_pmf(params: DetectorParams, m, mode: PmfMode | str = PmfMode.EXACT_PRODUCT):
    """Probability that the next detection arrives exactly ``m`` gates later."""
    mm = _as_gates(m)
    val = np.exp(log_interval_pmf(mm, one_minus_q(params), params.p0, params.decay, mode))
    return _out(val, m)


def total_afterpulse(params: DetectorParams) -> float:
    """Afterpulse probability summed over every gate after a detection."""
    return total_afterpulse_from(params.p0, params.decay)


def total_afterpulse_from(p0: float, decay: float) -> float:
    return p0 / math.expm1(decay)
