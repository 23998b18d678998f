"""Synthetic data generation and fitting."""
from .estimators import (
    FITTERS,
    AmplitudeNoiseFitter,
    ClosedLoopFitter,
    G0CalibrationFitter,
    HeatingFitter,
    LorentzianFitter,
    PhaseNoiseFitter,
    RingdownFitter,
    classical_phase_noise_spectrum,
)
from .optimize import FitResult, FitWarning, IllConditionedWarning, fit_curve
from .rng import make_rng, monte_carlo, spawn
from .synth import SyntheticPeriodogram, synth_periodogram

__all__ = [
    "FITTERS",
    "AmplitudeNoiseFitter",
    "ClosedLoopFitter",
    "FitResult",
    "FitWarning",
    "G0CalibrationFitter",
    "HeatingFitter",
    "IllConditionedWarning",
    "LorentzianFitter",
    "PhaseNoiseFitter",
    "RingdownFitter",
    "SyntheticPeriodogram",
    "classical_phase_noise_spectrum",
    "fit_curve",
    "make_rng",
    "monte_carlo",
    "spawn",
    "synth_periodogram",
]
