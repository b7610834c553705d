"""Two-photon interference of comb-spectrum photon pairs in a Michelson interferometer.

Analytic coincidence correlation functions for three interferometer regimes,
a Monte Carlo time-tag simulator, and a damped least-squares fitter.
"""

from .errors import (
    AlignmentError,
    BiphotonError,
    DegenerateFitError,
    EmptyDensityError,
    InvalidInputError,
    RegimeError,
    UndefinedVisibilityError,
)
from .model import (
    CorrelationCurve,
    DetectionParams,
    InterferometerConfig,
    PhaseWeights,
    Regime,
    SourceParams,
    classify_regime,
    correlation,
    delay_from_path,
    fringe_count,
    gamma_ave,
    gamma_balanced_perfect,
    gamma_balanced_rough,
    gamma_unbalanced,
    model_curve,
    phase_sweep,
    phase_weights,
    visibility,
)
from .sim import (
    CoincidenceHistogram,
    SimConfig,
    TimeTagStream,
    emit_timetags,
    expected_counts,
    histogram,
    sample_pair_delays,
    simulate_sweep,
    stream_delays,
)
from .fit import (
    FitResult,
    FitSpec,
    canonical_phase,
    fit,
    fit_phase,
    goodness,
    model_histogram,
    sweep_visibility,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "BiphotonError",
    "DegenerateFitError",
    "EmptyDensityError",
    "InvalidInputError",
    "RegimeError",
    "UndefinedVisibilityError",
    "CorrelationCurve",
    "DetectionParams",
    "InterferometerConfig",
    "PhaseWeights",
    "Regime",
    "SourceParams",
    "classify_regime",
    "correlation",
    "delay_from_path",
    "fringe_count",
    "gamma_ave",
    "gamma_balanced_perfect",
    "gamma_balanced_rough",
    "gamma_unbalanced",
    "model_curve",
    "phase_sweep",
    "phase_weights",
    "visibility",
    "CoincidenceHistogram",
    "SimConfig",
    "TimeTagStream",
    "emit_timetags",
    "expected_counts",
    "histogram",
    "sample_pair_delays",
    "simulate_sweep",
    "stream_delays",
    "FitResult",
    "FitSpec",
    "canonical_phase",
    "fit",
    "fit_phase",
    "goodness",
    "model_histogram",
    "sweep_visibility",
]
