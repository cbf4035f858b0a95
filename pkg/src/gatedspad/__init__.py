"""Real-time characterization of gated single-photon detectors from the
statistics of times between consecutive detections."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    DetectorParams,
    NonNormalizableError,
    PmfMode,
    afterpulse_prob,
    alpha,
    beta,
    geometric_slope,
    interval_pmf,
    no_count_prob,
    survival_product_exact,
    total_afterpulse,
)
from .simulate import (  # noqa: E402
    EventStream, Memory, SimConfig, per_gate_count_prob, simulate_stream, spawn_seeds)
from .intervals import (  # noqa: E402
    IntervalHistogram,
    SlidingWindow,
    build_histogram,
    extract_intervals,
    merge,
)
from .fit import (  # noqa: E402
    ConvergenceError,
    DecompositionResult,
    DelayScanProfile,
    FitOptions,
    FitResult,
    InsufficientStatisticsError,
    area_ratio_afterpulse,
    decompose_efficiency,
    effective_gate_width,
    fit_model,
    initial_guess,
    r_squared,
)
