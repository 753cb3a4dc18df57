"""Condensed message passing for CDMA multiuser detection.

A numpy library plus experiment harness covering:

- ``channel``: random spreading codes, BPSK bits, AWGN, received chips;
- ``detectors``: the noise-blind improved message-passing detector, the
  fixed-noise baseline, a matched filter and an exact enumeration oracle;
- ``density_evolution``: the macroscopic (E, F, M, Q) recursion predicting
  per-iteration error rates;
- ``saddle``: the scalar landscape whose one- or two-peak structure
  justifies the improved update;
- ``harness``: seeded Monte-Carlo runs, aggregation and result files;
- ``cli``: the ``cdma-mp`` command (simulate / de / sweep / saddle-scan /
  compare).
"""

__version__ = "0.1.0"

from .channel import (
    SpreadingSystem,
    SystemConfig,
    TrialSeed,
    empirical_signal_power,
    make_system,
    sample_system,
)
from .density_evolution import (
    DEConfig,
    DEState,
    ber_theory,
    de_step,
    fixed_point,
    gaussian_expectation,
)
from .detectors import (
    DetectorOutput,
    MessageState,
    bit_error_rate,
    convergence_metric,
    exact_mpm,
    hard_decisions,
    improved_mp_step,
    initial_state,
    matched_filter,
    original_mp_step,
    run_detector,
)
from .exceptions import (
    ConfigurationError,
    DegenerateParametersError,
    DegenerateStatisticsError,
    DegeneracyError,
    EnumerationLimitError,
)
from .harness import (
    AggregateResult,
    ExperimentSpec,
    run_experiment,
    sweep,
)
from .saddle import PeakSet, SaddleProblem, find_peaks, landscape, peak_weights, scan_regimes

__all__ = [
    "__version__",
    "SystemConfig",
    "SpreadingSystem",
    "TrialSeed",
    "sample_system",
    "make_system",
    "empirical_signal_power",
    "MessageState",
    "DetectorOutput",
    "initial_state",
    "improved_mp_step",
    "original_mp_step",
    "matched_filter",
    "exact_mpm",
    "run_detector",
    "hard_decisions",
    "convergence_metric",
    "bit_error_rate",
    "DEConfig",
    "DEState",
    "gaussian_expectation",
    "de_step",
    "fixed_point",
    "ber_theory",
    "SaddleProblem",
    "PeakSet",
    "landscape",
    "find_peaks",
    "peak_weights",
    "scan_regimes",
    "ExperimentSpec",
    "AggregateResult",
    "run_experiment",
    "sweep",
    "ConfigurationError",
    "DegeneracyError",
    "DegenerateStatisticsError",
    "DegenerateParametersError",
    "EnumerationLimitError",
]
