"""Monte Carlo detection streams from a gated detector.

Two afterpulse memories are supported:

``LAST_AVALANCHE_ONLY``
    the afterpulse hazard depends only on the most recent detection. Gaps
    are then i.i.d. with exactly the distribution of
    :func:`gatedspad.model.interval_pmf`, so they are drawn by inverse
    transform from a tabulated CDF instead of gate by gate.
``ACCUMULATING``
    every earlier avalanche within the horizon leaves its own trap
    population; the hazards combine as independent causes.

Runs are deterministic given the seed. Parallel runs should take
independent child seeds from :func:`spawn_seeds`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .model import DetectorParams, geometric_slope, one_minus_q

__all__ = [
    "Memory",
    "SimConfig",
    "EventStream",
    "simulate_stream",
    "per_gate_count_prob",
    "spawn_seeds",
]

_CHUNK = 1 << 18
_MAX_TABLE = 10_000_000


class Memory(Enum):
    LAST_AVALANCHE_ONLY = "last"
    ACCUMULATING = "accumulating"


@dataclass(frozen=True)
class SimConfig:
    params: DetectorParams
    n_detections: int | None = None
    n_gates: int | None = None
    seed: int = 0
    memory: Memory = Memory.LAST_AVALANCHE_ONLY
    horizon_eps: float = 1e-12

    def __post_init__(self):
        if (self.n_detections is None) == (self.n_gates is None):
            raise ValueError("set exactly one of n_detections or n_gates")
        stop = self.n_detections if self.n_gates is None else self.n_gates
        if stop < 0:
            raise ValueError("stop condition must be non-negative")
        if not 0 < self.horizon_eps < 1:
            raise ValueError("horizon_eps must lie in (0, 1)")


@dataclass(frozen=True)
class EventStream:
    """Gate indices (1-based) at which detections occurred."""

    gates: np.ndarray
    n_gates_simulated: int
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        g = np.asarray(self.gates, dtype=np.int64)
        object.__setattr__(self, "gates", g)
        if g.ndim != 1:
            raise ValueError("gates must be one-dimensional")
        if g.size:
            if g[0] < 1 or g[-1] > self.n_gates_simulated:
                raise ValueError("gate indices must lie in [1, n_gates_simulated]")
            if np.any(np.diff(g) <= 0):
                raise ValueError("gate indices must be strictly increasing")

    def __len__(self):
        return self.gates.size


def spawn_seeds(seed: int, n: int) -> list[int]:
    """Independent 64-bit child seeds for ``n`` parallel runs."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def per_gate_count_prob(params: DetectorParams, gates_since_last: int | None) -> float:
    """Probability that a gate registers a count.

    ``gates_since_last`` is ``None`` before the first detection, when there is
    no afterpulse history.
    """
    q = geometric_slope(params)
    if gates_since_last is None:
        return 1.0 - q
    if gates_since_last < 1:
        raise ValueError("gates_since_last must be >= 1")
    pa = params.p0 * math.exp(-gates_since_last * params.decay)
    return 1.0 - q * (1.0 - pa)


def _horizon(params: DetectorParams, eps: float) -> int:
    """Gates after which a single avalanche's afterpulse hazard is below eps."""
    if params.p0 <= eps:
        return 0
    return min(int(math.ceil(math.log(params.p0 / eps) / params.decay)), _MAX_TABLE)


def _first_gate(rng, omq):
    return int(rng.geometric(omq))


def _gap_table(params: DetectorParams, eps: float):
    """CDF of the gap on 1..K, and the geometric tail ratio beyond K."""
    q = geometric_slope(params)
    omq = one_minus_q(params)
    horizon = max(_horizon(params, eps), 1)
    # mass left after k gates is ~ q^k; stop tabulating once it is negligible
    if q > 0:
        k_mass = int(math.ceil(math.log(1e-17) / math.log(q))) if q < 1 else _MAX_TABLE
    else:
        k_mass = 1
    k = max(1, min(horizon, k_mass, _MAX_TABLE))
    m = np.arange(1, k + 1)
    pa = params.p0 * np.exp(-m * params.decay)
    hazard = omq + q * pa
    with np.errstate(divide="ignore"):
        log_stay = math.log(q) + np.log1p(-pa) if q > 0 else np.full(k, -np.inf)
    surv_before = np.exp(np.concatenate(([0.0], np.cumsum(log_stay)[:-1])))
    cdf = np.cumsum(hazard * surv_before)
    tail_hazard = omq + q * params.p0 * math.exp(-(k + 1) * params.decay)
    return cdf, min(tail_hazard, 1.0)


def _draw_gaps(rng, cdf, tail_hazard, n):
    u = rng.random(n)
    gaps = np.searchsorted(cdf, u, side="right").astype(np.int64) + 1
    k = cdf.size
    beyond = gaps > k
    n_tail = int(beyond.sum())
    if n_tail:
        gaps[beyond] = k + rng.geometric(tail_hazard, n_tail)
    return gaps


def _simulate_last(config: SimConfig, rng) -> EventStream:
    params = config.params
    omq = one_minus_q(params)
    limit = config.n_gates
    if omq <= 0:
        # nothing can seed a first avalanche
        return EventStream(np.empty(0, np.int64), limit)
    first = _first_gate(rng, omq)
    if limit is not None and first > limit:
        return EventStream(np.empty(0, np.int64), limit)
    if config.n_detections == 0:
        return EventStream(np.empty(0, np.int64), 0)
    cdf, tail_hazard = _gap_table(params, config.horizon_eps)

    if config.n_detections is not None:
        gaps = _draw_gaps(rng, cdf, tail_hazard, config.n_detections - 1)
        gates = np.empty(config.n_detections, np.int64)
        gates[0] = first
        np.cumsum(gaps, out=gates[1:])
        gates[1:] += first
        return EventStream(gates, int(gates[-1]))

    pieces = [np.array([first], np.int64)]
    last = first
    while True:
        gaps = _draw_gaps(rng, cdf, tail_hazard, _CHUNK)
        gates = last + np.cumsum(gaps)
        if gates[-1] > limit:
            pieces.append(gates[gates <= limit])
            break
        pieces.append(gates)
        last = int(gates[-1])
    return EventStream(np.concatenate(pieces), limit)


def _simulate_accumulating(config: SimConfig, rng) -> EventStream:
    params = config.params
    q = geometric_slope(params)
    omq = one_minus_q(params)
    limit = config.n_gates
    want = config.n_detections
    if omq <= 0 or want == 0:
        return EventStream(np.empty(0, np.int64), limit if limit is not None else 0)
    horizon = _horizon(params, config.horizon_eps)
    first = _first_gate(rng, omq)
    if limit is not None and first > limit:
        return EventStream(np.empty(0, np.int64), limit)

    offsets = np.arange(1, horizon + 1)
    decay_k = np.exp(-offsets * params.decay) if horizon else offsets
    gates = [first]
    recent = np.array([first], np.int64)
    while want is None or len(gates) < want:
        last = gates[-1]
        gap = None
        if horizon:
            recent = recent[last - recent < horizon]
            # amplitude of each prior avalanche at the latest detection
            amp = params.p0 * np.exp(-(last - recent) * params.decay)
            log_silent = np.log1p(-np.outer(amp, decay_k)).sum(axis=0)
            stay = q * np.exp(log_silent)
            # P(no count in gates 1..k) for k = 1..horizon
            surv = np.cumprod(stay)
            u = rng.random()
            idx = int(np.searchsorted(-surv, -u, side="right"))
            if idx < horizon:
                gap = idx + 1
        if gap is None:
            gap = horizon + int(rng.geometric(omq))
        g = last + gap
        if limit is not None and g > limit:
            break
        gates.append(g)
        recent = np.append(recent, g) if horizon else recent
    n_sim = limit if limit is not None else gates[-1]
    return EventStream(np.asarray(gates, np.int64), n_sim)


def simulate_stream(config: SimConfig) -> EventStream:
    """Simulate detection events for ``config``.

    Raises
    ------
    ValueError
        If the detector would fire in every gate (``q == 0``) while the stop
        condition is a detection count, or if ``q == 1`` with a detection
        count (the run would never finish).
    """
    params = config.params
    q = geometric_slope(params)
    if config.n_detections is not None:
        if q <= 0:
            raise ValueError("detector fires every gate (q = 0); use a gate-count stop")
        if q >= 1 and config.n_detections > 0:
            raise ValueError("no photon or dark count can fire (q = 1); "
                             "a detection-count stop would never be reached")
    rng = np.random.Generator(np.random.PCG64(config.seed))
    memory = Memory(config.memory)
    if memory is Memory.LAST_AVALANCHE_ONLY:
        stream = _simulate_last(config, rng)
    else:
        stream = _simulate_accumulating(config, rng)
    stream.meta.update(seed=config.seed, memory=memory.value)
    return stream
