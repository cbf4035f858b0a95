"""Parameter extraction from interval histograms.

The main entry point is :func:`fit_model`, which fits the logarithm of the
interval pmf to the normalized histogram. Photon counts and dark counts both
enter only through ``q = exp(-mu*eta) (1 - p_dark)``, so a single histogram
determines ``q``, ``p0`` and the per-gate decay ``d = T / tau`` and nothing
more. ``mu*eta`` or ``p_dark`` come out only when the other one is pinned, or
from several runs at different known ``mu`` via :func:`decompose_efficiency`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, stats

from .intervals import IntervalHistogram
from .model import PmfMode, log_interval_pmf, total_afterpulse_from

__all__ = [
    "FitError",
    "InsufficientStatisticsError",
    "ConvergenceError",
    "FitOptions",
    "FitSeed",
    "FitResult",
    "TailLine",
    "DecompositionResult",
    "DelayScanProfile",
    "usable_bins",
    "tail_line",
    "initial_guess",
    "fit_model",
    "r_squared",
    "area_ratio_afterpulse",
    "decompose_efficiency",
    "effective_gate_width",
]

LN10 = math.log(10.0)

# bounds in the optimizer's log space
_LOG_OMQ = (math.log(1e-12), math.log(1.0 - 1e-12))
_LOG_P0 = (math.log(1e-12), math.log(0.999))
_LOG_DECAY = (math.log(1e-4), math.log(50.0))


class FitError(RuntimeError):
    pass


class InsufficientStatisticsError(FitError):
    pass


class ConvergenceError(FitError):
    """The optimizer exhausted its restart budget; ``best`` holds the best point."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class FitOptions:
    """Knobs for :func:`fit_model`.

    ``bin_policy="nonzero"`` keeps every non-empty bin up to the last bin
    holding at least ``k_min`` counts; ``"threshold"`` keeps only bins with at
    least ``k_min`` counts. ``weighting`` is ``"poisson"`` (inverse variance
    of a log count, i.e. proportional to the count) or ``"uniform"`` on the
    log residuals. ``objective="likelihood"`` swaps the log-domain least
    squares for the multinomial likelihood of the whole histogram, which
    stays unbiased on short ensembles. At most one of ``pin_p_dark`` /
    ``pin_mu_eta`` may be set.
    """

    mode: PmfMode = PmfMode.EXACT_PRODUCT
    bin_policy: str = "nonzero"
    k_min: int = 5
    m_fit_max: int | None = None
    weighting: str = "poisson"
    objective: str = "log-lsq"
    optimizer: str = "simplex"
    restarts: int = 3
    xatol: float = 1e-10
    fatol: float = 1e-15
    max_iter: int = 4000
    pin_p_dark: float | None = None
    pin_mu_eta: float | None = None
    bootstrap: int = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", PmfMode.parse(self.mode))
        if self.bin_policy not in ("nonzero", "threshold"):
            raise ValueError(f"unknown bin policy {self.bin_policy!r}")
        if self.k_min < 1:
            raise ValueError("k_min must be >= 1")
        if self.weighting not in ("uniform", "poisson"):
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if self.objective not in ("log-lsq", "likelihood"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.optimizer not in ("simplex", "quasi-newton"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.pin_p_dark is not None and self.pin_mu_eta is not None:
            raise ValueError("pin at most one of p_dark and mu_eta")
        if self.pin_p_dark is not None and not 0 <= self.pin_p_dark < 1:
            raise ValueError("pinned p_dark must lie in [0, 1)")
        if self.pin_mu_eta is not None and not self.pin_mu_eta > 0:
            raise ValueError("pinned mu_eta must be > 0")


@dataclass(frozen=True)
class TailLine:
    """Straight line ``log10 pmf = intercept + slope * m`` through the tail."""

    slope: float
    intercept: float
    knee: int
    m: np.ndarray = field(repr=False)

    @property
    def q(self) -> float:
        return 10.0 ** self.slope

    def pmf(self, m) -> np.ndarray:
        return 10.0 ** (self.intercept + self.slope * np.asarray(m, dtype=float))


@dataclass(frozen=True)
class FitSeed:
    q: float
    p0: float
    decay: float
    line: TailLine


@dataclass
class FitResult:
    q_hat: float
    p0_hat: float
    d_hat: float
    gate_period_s: float
    r_squared: float | None
    m: np.ndarray = field(repr=False)
    residuals: np.ndarray = field(repr=False)
    objective: float = float("nan")
    iterations: int = 0
    converged: bool = True
    at_bounds: tuple = ()
    mu_eta_hat: float | None = None
    p_dark_hat: float | None = None
    std_errors: dict | None = None
    n_intervals: int = 0
    mode: PmfMode = PmfMode.EXACT_PRODUCT
    one_minus_q: float = float("nan")

    @property
    def tau_s(self) -> float:
        return self.gate_period_s / self.d_hat

    @property
    def p_total_hat(self) -> float:
        return total_afterpulse_from(self.p0_hat, self.d_hat)

    def log_pmf(self, m) -> np.ndarray:
        return log_interval_pmf(m, self.one_minus_q, self.p0_hat, self.d_hat, self.mode)

    def as_dict(self) -> dict:
        return {
            "q": self.q_hat,
            "one_minus_q": self.one_minus_q,
            "p0": self.p0_hat,
            "decay_per_gate": self.d_hat,
            "tau_s": self.tau_s,
            "p_total": self.p_total_hat,
            "mu_eta": self.mu_eta_hat,
            "p_dark": self.p_dark_hat,
            "r_squared": self.r_squared,
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "at_bounds": list(self.at_bounds),
            "n_intervals": self.n_intervals,
            "n_bins_fit": int(self.m.size),
            "mode": self.mode.value,
            "std_errors": self.std_errors,
        }


# -- bin selection ---------------------------------------------------------

def usable_bins(hist: IntervalHistogram, options: FitOptions | None = None) -> np.ndarray:
    """Gap values ``m`` that enter the log-domain fit."""
    options = options or FitOptions()
    counts = hist.counts
    if options.bin_policy == "threshold":
        keep = counts >= options.k_min
        m_hi = hist.m_max
    else:
        keep = counts >= 1
        m_hi = hist.last_bin_with(options.k_min)
    if options.m_fit_max is not None:
        if options.m_fit_max > hist.m_max:
            raise ValueError("m_fit_max exceeds the histogram's m_max")
        m_hi = min(m_hi, options.m_fit_max)
    m = hist.gaps[keep]
    return m[m <= m_hi]


def _log10_pmf(hist, m):
    return np.log10(hist.counts[m - 1] / hist.total)


def _line_fit(m, y, w):
    sw = w.sum()
    mbar = (w * m).sum() / sw
    ybar = (w * y).sum() / sw
    dm = m - mbar
    slope = (w * dm * (y - ybar)).sum() / (w * dm * dm).sum()
    return slope, ybar - slope * mbar


def tail_line(hist: IntervalHistogram, knee_exclusion: int | None = None,
              options: FitOptions | None = None) -> TailLine:
    """Straight line through the log10 histogram, leaving out the bend.

    Bins are weighted by their counts (inverse variance of a log count). With
    ``knee_exclusion=None`` the knee is the first ``m`` whose excess over the
    line is below twice its counting noise, found by iterating from a
    provisional line through the upper three quarters of the usable range.
    """
    m_all = usable_bins(hist, options)
    if m_all.size < 2:
        raise InsufficientStatisticsError(
            f"need at least 2 usable bins for the tail line, have {m_all.size}")
    y_all = _log10_pmf(hist, m_all)
    w_all = hist.counts[m_all - 1].astype(float)

    def fit_from(start):
        sel = m_all >= start
        if sel.sum() < 2:
            sel = np.zeros_like(sel)
            sel[-2:] = True
        slope, intercept = _line_fit(m_all[sel], y_all[sel], w_all[sel])
        return slope, intercept, int(m_all[sel][0])

    if knee_exclusion is not None:
        slope, intercept, start = fit_from(knee_exclusion + 1)
        return TailLine(slope, intercept, start, m_all)

    start = int(m_all[0] + 0.25 * (m_all[-1] - m_all[0]))
    slope, intercept, start = fit_from(start)
    for _ in range(3):
        expected = hist.total * 10.0 ** (intercept + slope * m_all)
        excess = hist.counts[m_all - 1] - expected
        quiet = np.flatnonzero(excess < 2.0 * np.sqrt(expected))
        knee = int(m_all[quiet[0]]) if quiet.size else int(m_all[-2])
        slope, intercept, new_start = fit_from(knee)
        if new_start == start:
            break
        start = new_start
    return TailLine(slope, intercept, start, m_all)


def initial_guess(hist: IntervalHistogram, options: FitOptions | None = None) -> FitSeed:
    """Seed for the optimizer from the tail line and the early-bin excess."""
    options = options or FitOptions()
    line = tail_line(hist, options=options)
    q = float(np.clip(line.q, 1e-9, 1.0 - 1e-9))
    omq = 1.0 - q
    early = line.m[line.m < line.knee]
    emp = hist.counts[early - 1] / hist.total
    # pmf / line - 1 ~ q P_a(m) / (1 - q)
    pa = (emp / line.pmf(early) - 1.0) * omq / q
    good = pa > 0
    if good.sum() >= 2:
        slope, intercept = np.polyfit(early[good], np.log(pa[good]), 1)
        decay, p0 = -slope, math.exp(intercept)
    elif good.sum() == 1:
        decay = 1.0
        p0 = float(pa[good][0]) * math.exp(decay * early[good][0])
    else:
        decay, p0 = 1.0, 1e-6
    decay = float(np.clip(decay, 1e-3, 20.0))
    p0 = float(np.clip(p0, 1e-9, 0.9))
    return FitSeed(q, p0, decay, line)


# -- main fit ----------------------------------------------------------------

class _Problem:
    """Maps optimizer coordinates to (1 - q, p0, d) honouring pins."""

    def __init__(self, hist, options, m):
        self.options = options
        self.m = m
        self.y = _log10_pmf(hist, m) * LN10  # natural log
        self.w = _weights(hist, m, options)
        if options.objective == "likelihood":
            # with no overflow, empty bins past the last count only enter
            # through the normalization, which the lumped remainder covers
            last = hist.m_max if hist.overflow else int(np.flatnonzero(hist.counts)[-1]) + 1
            self.all_m = hist.gaps[:last]
            nz = hist.counts[:last] > 0
            self.nz = nz
            self.frac = hist.counts[:last][nz] / hist.total
            self.over_frac = hist.overflow / hist.total
        if options.pin_p_dark is not None:
            self.first = "mu_eta"
            self.bounds0 = (math.log(1e-12), math.log(30.0))
        elif options.pin_mu_eta is not None:
            self.first = "p_dark"
            self.bounds0 = (math.log(1e-15), math.log(0.999))
        else:
            self.first = "omq"
            self.bounds0 = _LOG_OMQ
        self.bounds = [self.bounds0, _LOG_P0, _LOG_DECAY]

    def one_minus_q(self, x0):
        v = math.exp(x0)
        if self.first == "omq":
            return v
        if self.first == "mu_eta":
            pd = self.options.pin_p_dark
            return -math.expm1(-v) * (1.0 - pd) + pd
        pd = v
        return -math.expm1(-self.options.pin_mu_eta) * (1.0 - pd) + pd

    def to_x(self, omq, p0, decay):
        if self.first == "omq":
            x0 = math.log(omq)
        elif self.first == "mu_eta":
            q = 1.0 - omq
            x0 = math.log(max(-math.log(q / (1.0 - self.options.pin_p_dark)), 1e-12))
        else:
            q = 1.0 - omq
            pd = 1.0 - q / math.exp(-self.options.pin_mu_eta)
            x0 = math.log(max(pd, 1e-15))
        x = np.array([x0, math.log(p0), math.log(decay)])
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return np.clip(x, lo, hi)

    def unpack(self, x):
        return self.one_minus_q(x[0]), math.exp(x[1]), math.exp(x[2])

    def residuals(self, x):
        omq, p0, decay = self.unpack(x)
        if not 0 < omq < 1:
            return np.full(self.m.size, np.inf)
        model = log_interval_pmf(self.m, omq, p0, decay, self.options.mode)
        return (self.y - model) / LN10

    def objective(self, x):
        if self.options.objective == "likelihood":
            return self.neg_log_likelihood(x)
        r = self.residuals(x)
        val = float((self.w * r * r).sum())
        return val if math.isfinite(val) else 1e300

    def neg_log_likelihood(self, x):
        """Per-interval multinomial negative log-likelihood, overflow lumped."""
        omq, p0, decay = self.unpack(x)
        if not 0 < omq < 1:
            return 1e300
        lp = log_interval_pmf(self.all_m, omq, p0, decay, self.options.mode)
        val = -float((self.frac * lp[self.nz]).sum())
        if self.over_frac:
            rest = 1.0 - float(np.exp(lp).sum())
            val -= self.over_frac * math.log(max(rest, 1e-300))
        return val if math.isfinite(val) else 1e300


def _minimize(problem, x0, options, step):
    lo = np.array([b[0] for b in problem.bounds])
    hi = np.array([b[1] for b in problem.bounds])
    x0 = np.clip(x0, lo, hi)
    if options.optimizer == "simplex":
        # step away from a bound that x0 sits on
        dirs = np.where(x0 + step > hi, -1.0, 1.0)
        simplex = np.vstack([x0] + [x0 + step * d * e for d, e in zip(dirs, np.eye(3))])
        simplex = np.clip(simplex, lo, hi)
        return optimize.minimize(
            problem.objective, x0, method="Nelder-Mead", bounds=problem.bounds,
            options={"initial_simplex": simplex, "xatol": options.xatol,
                     "fatol": options.fatol, "maxiter": options.max_iter,
                     "maxfev": 2 * options.max_iter})
    return optimize.minimize(problem.objective, x0, method="L-BFGS-B",
                             bounds=problem.bounds,
                             options={"maxiter": options.max_iter, "ftol": 1e-15,
                                      "gtol": 1e-12})


def fit_model(hist: IntervalHistogram, gate_period_s: float = 1.0,
              options: FitOptions | None = None, seed: FitSeed | None = None) -> FitResult:
    """Least-squares fit of the log interval pmf to ``hist``.

    Raises
    ------
    InsufficientStatisticsError
        Fewer usable bins than free parameters plus one.
    ConvergenceError
        No restart converged; ``err.best`` carries the best result found.
    """
    options = options or FitOptions()
    if not gate_period_s > 0:
        raise ValueError("gate_period_s must be > 0")
    m = usable_bins(hist, options)
    if m.size < 4:
        raise InsufficientStatisticsError(
            f"{m.size} usable bins; the fit needs at least 4")
    if seed is None:
        seed = initial_guess(hist, options)
    problem = _Problem(hist, options, m)
    x_seed = problem.to_x(1.0 - seed.q, seed.p0, seed.decay)
    rng = np.random.default_rng(options.seed)

    best = _minimize(problem, x_seed, options, step=0.1)
    iterations = int(best.nit)
    any_ok = bool(best.success)
    for _ in range(options.restarts):
        start = best.x + rng.normal(scale=0.05, size=3)
        res = _minimize(problem, start, options, step=0.05)
        iterations += int(res.nit)
        any_ok |= bool(res.success)
        if res.fun < best.fun:
            best = res
    if options.restarts:
        # final polish from the best point with a small simplex
        res = _minimize(problem, best.x, options, step=0.01)
        iterations += int(res.nit)
        any_ok |= bool(res.success)
        if res.fun <= best.fun:
            best = res

    result = _make_result(problem, hist, best.x, gate_period_s, options)
    result.objective = float(best.fun)
    result.iterations = iterations
    result.converged = any_ok
    if not any_ok:
        raise ConvergenceError("optimizer did not converge within the restart budget",
                               best=result)
    if options.bootstrap:
        result.std_errors = _bootstrap(hist, gate_period_s, options, result)
    return result


def _make_result(problem, hist, x, gate_period_s, options):
    omq, p0, decay = problem.unpack(x)
    res = problem.residuals(x)
    names = (problem.first, "p0", "decay")
    at_bounds = tuple(
        name for name, xi, (lo, hi) in zip(names, x, problem.bounds)
        if min(xi - lo, hi - xi) < 1e-6)
    result = FitResult(
        q_hat=1.0 - omq, p0_hat=p0, d_hat=decay, gate_period_s=gate_period_s,
        r_squared=None, m=problem.m, residuals=res, at_bounds=at_bounds,
        n_intervals=hist.total, mode=options.mode, one_minus_q=omq)
    if problem.first == "mu_eta":
        result.mu_eta_hat = math.exp(x[0])
        result.p_dark_hat = options.pin_p_dark
    elif problem.first == "p_dark":
        result.p_dark_hat = math.exp(x[0])
        result.mu_eta_hat = options.pin_mu_eta
    result.r_squared = r_squared(hist, result, options)
    return result


def _bootstrap(hist, gate_period_s, options, result):
    """Spread of the estimates over multinomial resamples of the intervals."""
    total = hist.total
    probs = np.append(hist.counts, hist.overflow) / total
    children = np.random.SeedSequence(options.seed).spawn(options.bootstrap)
    inner = replace(options, bootstrap=0, restarts=0)
    seed = FitSeed(result.q_hat, result.p0_hat, result.d_hat, None)
    rows = []
    for child in children:
        draw = np.random.default_rng(child).multinomial(total, probs)
        boot = IntervalHistogram(draw[:-1], int(draw[-1]))
        try:
            r = fit_model(boot, gate_period_s, inner, seed=seed)
        except FitError:
            continue
        rows.append((r.q_hat, r.p0_hat, r.d_hat, r.p_total_hat,
                     r.mu_eta_hat if r.mu_eta_hat is not None else np.nan,
                     r.p_dark_hat if r.p_dark_hat is not None else np.nan))
    if len(rows) < 2:
        return None
    sd = np.std(np.array(rows), axis=0, ddof=1)
    keys = ("q", "p0", "decay_per_gate", "p_total", "mu_eta", "p_dark")
    return {k: (None if math.isnan(v) else float(v)) for k, v in zip(keys, sd)}


def _weights(hist, m, options):
    counts = hist.counts[m - 1].astype(float)
    w = counts if options.weighting == "poisson" else np.ones_like(counts)
    return w / w.sum()


def r_squared(hist: IntervalHistogram, result: FitResult,
              options: FitOptions | None = None) -> float | None:
    """Coefficient of determination on log10 pmf over the fitted bins.

    Sums carry the same bin weights as the fit, so with uniform weighting this
    is the textbook ``1 - SS_res / SS_tot``. Returns ``None`` when the data
    have no spread.
    """
    options = options or FitOptions()
    m = result.m
    y = _log10_pmf(hist, m)
    w = _weights(hist, m, options)
    model = result.log_pmf(m) / LN10
    ybar = float((w * y).sum())
    ss_res = float((w * (y - model) ** 2).sum())
    ss_tot = float((w * (y - ybar) ** 2).sum())
    if ss_tot == 0:
        return None
    return 1.0 - ss_res / ss_tot


# -- cross-checks ------------------------------------------------------------

def area_ratio_afterpulse(hist: IntervalHistogram, knee_exclusion: int | None = None,
                          options: FitOptions | None = None) -> float:
    """Total afterpulse probability from the area above the tail line.

    Everything above the straight tail line is attributed to afterpulses:
    ``1 - sum(line) / sum(data)`` over ``m = 1..m_max``, clamped to [0, 1].
    """
    line = tail_line(hist, knee_exclusion, options)
    emp = hist.counts.sum() / hist.total
    under_line = line.pmf(hist.gaps).sum()
    return float(np.clip(1.0 - under_line / emp, 0.0, 1.0))


@dataclass(frozen=True)
class DecompositionResult:
    eta_hat: float
    p_dark_hat: float
    slope: float
    intercept: float
    slope_stderr: float
    intercept_stderr: float
    eta_stderr: float
    p_dark_stderr: float
    n_runs: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def decompose_efficiency(runs) -> DecompositionResult:
    """Separate efficiency and dark counts from ``(mu_known, q_hat)`` pairs.

    ``ln q = -eta * mu + ln(1 - p_dark)``, so a straight line through
    ``(mu, ln q)`` gives ``eta`` from the slope and ``p_dark`` from the
    intercept.
    """
    runs = [(float(mu), float(q)) for mu, q in runs]
    if len(runs) < 2:
        raise ValueError("need at least two runs")
    mu = np.array([r[0] for r in runs])
    if np.unique(mu).size < 2:
        raise ValueError("need at least two distinct mu values")
    q = np.array([r[1] for r in runs])
    if np.any((q <= 0) | (q >= 1)):
        raise ValueError("q values must lie in (0, 1)")
    fit = stats.linregress(mu, np.log(q))
    eta = -fit.slope
    p_dark = -math.expm1(fit.intercept)
    if len(runs) > 2:
        slope_se, icpt_se = float(fit.stderr), float(fit.intercept_stderr)
    else:
        slope_se = icpt_se = float("nan")
    return DecompositionResult(
        eta_hat=float(np.clip(eta, 0.0, 1.0)),
        p_dark_hat=float(np.clip(p_dark, 0.0, 1.0 - 1e-15)),
        slope=float(fit.slope), intercept=float(fit.intercept),
        slope_stderr=slope_se, intercept_stderr=icpt_se,
        eta_stderr=slope_se, p_dark_stderr=math.exp(fit.intercept) * icpt_se,
        n_runs=len(runs))


@dataclass(frozen=True)
class DelayScanProfile:
    """Count rate versus trigger delay, normalized to a unit peak."""

    delay_s: np.ndarray
    rate: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.delay_s, dtype=float)
        r = np.asarray(self.rate, dtype=float)
        object.__setattr__(self, "delay_s", d)
        object.__setattr__(self, "rate", r)
        if d.ndim != 1 or d.shape != r.shape:
            raise ValueError("delay and rate must be 1-d arrays of equal length")
        if d.size < 3:
            raise ValueError("a delay scan needs at least 3 samples")
        if np.any(np.diff(d) <= 0):
            raise ValueError("delays must be strictly increasing")
        if np.any(r < 0) or not math.isclose(r.max(), 1.0, rel_tol=1e-9):
            raise ValueError("rates must be non-negative and normalized to a unit peak")

    @classmethod
    def from_counts(cls, delay_s, counts) -> "DelayScanProfile":
        counts = np.asarray(counts, dtype=float)
        if counts.max() <= 0:
            raise ValueError("delay scan has no counts")
        return cls(delay_s, counts / counts.max())


def effective_gate_width(profile: DelayScanProfile) -> float:
    """Equivalent-area width: integral of the profile over its peak (trapezoid)."""
    area = np.trapezoid(profile.rate, profile.delay_s)
    return float(area / profile.rate.max())
