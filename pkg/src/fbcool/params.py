"""Physical parameters of the optomechanical system and the rates derived from them.

All frequencies and rates are stored as angular quantities (rad/s). Config
files and CSV outputs use ordinary frequency in Hz; conversion happens at
the I/O boundary (see :mod:`fbcool.config`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

HBAR = 1.054571817e-34  # J s
K_B = 1.380649e-23  # J / K
TWO_PI = 2.0 * math.pi


class ParameterError(ValueError):
    """Raised when a physical parameter violates its domain."""


def hz(value: float) -> float:
    """Convert an ordinary frequency in Hz to rad/s."""
    return TWO_PI * value


def to_hz(value):
    """Convert rad/s to Hz (works elementwise on arrays)."""
    return value / TWO_PI


@dataclass(frozen=True)
class MechanicalMode:
    omega_m: float
    gamma_m: float
    mass: float

    def __post_init__(self):
        for name in ("omega_m", "gamma_m", "mass"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ParameterError(f"MechanicalMode.{name} must be positive and finite, got {value!r}")

    @property
    def quality_factor(self) -> float:
        return self.omega_m / self.gamma_m

    def loaded(self, gamma_opt: float = 0.0, spring_shift: float = 0.0) -> "MechanicalMode":
        """Mode with optical damping and spring shift folded into its resonance."""
        return replace(self, omega_m=self.omega_m + spring_shift, gamma_m=self.gamma_m + gamma_opt)


@dataclass(frozen=True)
class ZeroPoint:
    x_zpf: float
    p_zpf: float


@dataclass(frozen=True)
class ThermalBath:
    """Bath specified either by temperature or directly by its occupation."""

    temperature: Optional[float] = None
    n_th: Optional[float] = None

    def __post_init__(self):
        if self.temperature is None and self.n_th is None:
            raise ParameterError("ThermalBath needs temperature or n_th")
        if self.temperature is not None and not self.temperature > 0:
            raise ParameterError(f"temperature must be > 0, got {self.temperature!r}")
        if self.n_th is not None and not self.n_th >= 0:
            raise ParameterError(f"n_th must be >= 0, got {self.n_th!r}")

    def occupation(self, omega: float) -> float:
        if self.n_th is not None:
            return self.n_th
        return bose_occupation(self, omega)


@dataclass(frozen=True)
class OpticalDrive:
    kappa: float
    g0: float
    n_cav: float = 0.0
    detuning: float = 0.0
    eta_c: float = 1.0
    role: str = "probe"

    def __post_init__(self):
        if not self.kappa > 0:
            raise ParameterError(f"kappa must be > 0, got {self.kappa!r}")
        if not 0.0 <= self.eta_c <= 1.0:
            raise ParameterError(f"eta_c must lie in [0, 1], got {self.eta_c!r}")
        if not self.n_cav >= 0:
            raise ParameterError(f"n_cav must be >= 0, got {self.n_cav!r}")
        if self.role not in ("probe", "auxiliary"):
            raise ParameterError(f"role must be 'probe' or 'auxiliary', got {self.role!r}")

    @property
    def g(self) -> float:
        """Field-enhanced coupling rate."""
        return self.g0 * math.sqrt(self.n_cav)


@dataclass(frozen=True)
class MeasurementRates:
    gamma_meas: float
    gamma_qba: float
    gamma_th: float
    c_q: float
    eta: float
    eta_det: float


def derive_zero_point(mode: MechanicalMode) -> ZeroPoint:
    x_zpf = math.sqrt(HBAR / (2.0 * mode.mass * mode.omega_m))
    return ZeroPoint(x_zpf=x_zpf, p_zpf=HBAR / (2.0 * x_zpf))


def bose_occupation(bath: ThermalBath, omega: float) -> float:
    """Exact Bose-Einstein occupation at angular frequency ``omega``."""
    if bath.temperature is None or not bath.temperature > 0:
        raise ParameterError("bose_occupation needs a positive temperature")
    if not omega > 0:
        raise ParameterError(f"omega must be > 0, got {omega!r}")
    x = HBAR * omega / (K_B * bath.temperature)
    if x > 700:
        return 0.0
    return 1.0 / math.expm1(x)


def temperature_for_occupation(n_th: float, omega: float) -> float:
    """Inverse of the Bose factor."""
    return HBAR * omega / (K_B * math.log1p(1.0 / n_th))


def derive_rates(probe: OpticalDrive, eta_det: float, mode: MechanicalMode, bath: ThermalBath) -> MeasurementRates:
    """Measurement, backaction and thermal decoherence rates for a resonant probe."""
    if probe.role != "probe":
        raise ParameterError("derive_rates expects the probe drive")
    if not 0.0 <= eta_det <= 1.0:
        raise ParameterError(f"eta_det must lie in [0, 1], got {eta_det!r}")
    gamma_qba = 4.0 * probe.g**2 / probe.kappa
    gamma_th = bath.occupation(mode.omega_m) * mode.gamma_m
    c_q = gamma_qba / gamma_th if gamma_th > 0 else math.inf
    if math.isinf(c_q):
        eta = eta_det
    else:
        # eta = gamma_meas / (gamma_qba + gamma_th), written so that c_q -> 0 stays finite
        eta = eta_det * c_q / (1.0 + c_q)
    return MeasurementRates(
        gamma_meas=eta_det * gamma_qba,
        gamma_qba=gamma_qba,
        gamma_th=gamma_th,
        c_q=c_q,
        eta=eta,
        eta_det=eta_det,
    )


@dataclass(frozen=True)
class SystemParams:
    """Everything the forward model needs, in SI units with angular rates.

    ``aux_ratio`` is the auxiliary beam's force noise relative to the thermal
    force noise. ``gamma_opt`` and ``spring_shift`` describe the dynamical
    backaction of the auxiliary beam on the mode of interest. ``extra_modes``
    are additional mechanical modes seen by the feedback loop; they only enter
    the stability analysis.
    """

    mode: MechanicalMode
    bath: ThermalBath
    probe: OpticalDrive
    eta_det: float = 1.0
    aux: Optional[OpticalDrive] = None
    aux_ratio: float = 0.0
    gamma_opt: float = 0.0
    spring_shift: float = 0.0
    extra_modes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not 0.0 <= self.eta_det <= 1.0:
            raise ParameterError(f"eta_det must lie in [0, 1], got {self.eta_det!r}")
        if not self.aux_ratio >= 0:
            raise ParameterError(f"aux_ratio must be >= 0, got {self.aux_ratio!r}")
        if self.mode.gamma_m + self.gamma_opt <= 0:
            raise ParameterError("total mechanical damping must stay positive")

    @property
    def zero_point(self) -> ZeroPoint:
        return derive_zero_point(self.mode)

    @property
    def n_th(self) -> float:
        return self.bath.occupation(self.mode.omega_m)

    @property
    def rates(self) -> MeasurementRates:
        return derive_rates(self.probe, self.eta_det, self.mode, self.bath)

    @property
    def loaded_mode(self) -> MechanicalMode:
        return self.mode.loaded(self.gamma_opt, self.spring_shift)

    def with_cooperativity(self, c_q: float) -> "SystemParams":
        """Copy with the probe photon number set to reach quantum cooperativity ``c_q``."""
        if not c_q >= 0:
            raise ParameterError(f"c_q must be >= 0, got {c_q!r}")
        gamma_th = self.n_th * self.mode.gamma_m
        n_cav = c_q * gamma_th * self.probe.kappa / (4.0 * self.probe.g0**2)
        return replace(self, probe=replace(self.probe, n_cav=n_cav))

    def replace(self, **changes) -> "SystemParams":
        return replace(self, **changes)
