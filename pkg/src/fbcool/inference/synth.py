"""Synthetic measurement records for tests, Monte-Carlo studies and the CLI."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..params import ParameterError
from ..spectra import Spectrum
from .rng import make_rng


@dataclass(frozen=True)
class SyntheticPeriodogram:
    """Welch-averaged periodogram drawn around an expected PSD.

    With ``averages`` segments each bin is the mean of ``N`` exponential
    variates, so ``realized / expected`` follows ``Gamma(N, 1/N)``.
    """

    expected: Spectrum
    realized: Spectrum
    averages: int
    seed: int
    stream: int = 0

    @property
    def frequency(self) -> np.ndarray:
        return self.expected.frequency

    @property
    def ratio(self) -> np.ndarray:
        return self.realized.values / self.expected.values


def synth_periodogram(expected: Spectrum, averages: int, seed: int, stream: int = 0) -> SyntheticPeriodogram:
    if not averages >= 1:
        raise ParameterError(f"averages must be >= 1, got {averages!r}")
    rng = make_rng(seed, stream)
    draws = rng.gamma(shape=float(averages), scale=1.0 / averages, size=len(expected))
    realized = Spectrum(expected.frequency, expected.values * draws, expected.unit)
    return SyntheticPeriodogram(expected=expected, realized=realized, averages=int(averages),
                                seed=int(seed), stream=int(stream))


def multiplicative_noise(values, rel_sigma: float, rng: np.random.Generator) -> np.ndarray:
    """``values * (1 + rel_sigma * N(0, 1))``, clipped to stay positive."""
    values = np.asarray(values, dtype=float)
    factor = 1.0 + rel_sigma * rng.standard_normal(values.shape)
    return values * np.clip(factor, 1e-3, None)


def ringdown_trace(t, x0: float, rate: float, noise: float, rng: np.random.Generator) -> np.ndarray:
    """Amplitude decay with additive detection noise of standard deviation ``noise * x0``.

    Samples are folded to stay positive, as an amplitude (envelope) would.
    """
    t = np.asarray(t, dtype=float)
    clean = x0 * np.exp(-rate * t)
    return np.abs(clean + noise * x0 * rng.standard_normal(t.shape))


def amplitude_noise_data(powers, shot_slope: float, classical_ratio: float, reference_power: float,
                         offset: float, rel_noise: float, rng: np.random.Generator) -> np.ndarray:
    """Detected variance ``c + a P + b P^2`` with ``b = classical_ratio * a / P_ref``."""
    powers = np.asarray(powers, dtype=float)
    b = classical_ratio * shot_slope / reference_power
    return multiplicative_noise(offset + shot_slope * powers + b * powers**2, rel_noise, rng)
