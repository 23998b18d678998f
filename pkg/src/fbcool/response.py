"""Complex transfer functions of the mechanics and of the feedback controller.

Fourier convention: ``x(Omega) = int x(t) exp(+i Omega t) dt``. Causal responses
are then analytic in the upper half plane and a mechanical oscillator reads
``1 / (m (Omega_m^2 - Omega^2 - i Gamma_m Omega))``.

With this kernel a feedback force ``h(Omega) x`` adds damping when
``Im h(Omega_m) > 0``, i.e. the cold-damping phase puts ``arg h(Omega_m)``
at ``+pi/2``. :func:`cooling_phase` finds that phase numerically rather than
assuming it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .params import MechanicalMode, ParameterError


def chi_m(mode: MechanicalMode, omega):
    """Mechanical susceptibility in m/N."""
    omega = np.asarray(omega, dtype=float)
    return 1.0 / (mode.mass * (mode.omega_m**2 - omega**2 - 1j * mode.gamma_m * omega))


def chi_total(modes: Sequence[MechanicalMode], omega):
    """Summed susceptibility of several modes driven by the same force."""
    return sum(chi_m(mode, omega) for mode in modes)


@dataclass(frozen=True)
class BandpassStage:
    omega_c: float
    gamma_bw: float
    order: int = 2

    def __post_init__(self):
        if not self.omega_c > 0:
            raise ParameterError(f"omega_c must be > 0, got {self.omega_c!r}")
        if not self.gamma_bw > 0:
            raise ParameterError(f"gamma_bw must be > 0, got {self.gamma_bw!r}")
        if int(self.order) != self.order or self.order < 1:
            raise ParameterError(f"order must be a positive integer, got {self.order!r}")

    def response(self, omega):
        """Unit-peak bandpass bracket raised to ``order``; equals ``i**order`` at the center."""
        omega = np.asarray(omega, dtype=float)
        bracket = self.gamma_bw * omega / (self.omega_c**2 - omega**2 - 1j * self.gamma_bw * omega)
        return bracket**self.order


@dataclass(frozen=True)
class AuxStage:
    """One auxiliary controller section: its own gain, phase and bandpass."""

    stage: BandpassStage
    gain: float = 0.0
    phase: float = 0.0


@dataclass(frozen=True)
class FeedbackController:
    """Main bandpass controller with loop delay plus optional auxiliary sections.

    ``gain`` is in kg (rad/s)^2 so that ``h`` is a force per displacement.
    The delay applies to every section, since it stems from the shared loop.
    """

    gain: float
    phase: float
    delay: float
    main: BandpassStage
    aux_stages: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not self.delay >= 0:
            raise ParameterError(f"delay must be >= 0, got {self.delay!r}")
        object.__setattr__(self, "aux_stages", tuple(self.aux_stages))

    def with_gain(self, gain: float) -> "FeedbackController":
        return replace(self, gain=gain)

    def with_phase(self, phase: float) -> "FeedbackController":
        return replace(self, phase=phase)


def _hermitian(omega, positive_branch):
    # Real-valued time-domain filter: h(-Omega) = conj(h(Omega)).
    omega = np.asarray(omega, dtype=float)
    value = positive_branch(np.abs(omega))
    return np.where(omega < 0, np.conj(value), value)


def h_main(controller: FeedbackController, omega):
    def branch(w):
        return (
            controller.gain
            * np.exp(1j * (w * controller.delay - controller.phase))
            * controller.main.response(w)
        )

    return _hermitian(omega, branch)


def h_aux(controller: FeedbackController, omega):
    omega = np.asarray(omega, dtype=float)
    total = np.zeros(omega.shape, dtype=complex)
    for aux in controller.aux_stages:
        def branch(w, aux=aux):
            return aux.gain * np.exp(1j * (w * controller.delay - aux.phase)) * aux.stage.response(w)

        total = total + _hermitian(omega, branch)
    return total


def h_total(controller: FeedbackController, omega):
    """Full controller response ``h_main + h_aux``."""
    return h_main(controller, omega) + h_aux(controller, omega)


def loop_gain(modes: Sequence[MechanicalMode], controller: FeedbackController, omega):
    """Open-loop gain ``L = chi h`` whose return difference ``1 - L`` sets stability."""
    return chi_total(modes, omega) * h_total(controller, omega)


def chi_eff(mode: MechanicalMode, controller: FeedbackController, omega):
    """Closed-loop susceptibility; exact zeros of ``1 - chi h`` map to complex infinity."""
    chi = chi_m(mode, omega)
    denom = 1.0 - chi * h_total(controller, omega)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = chi / denom
    return np.where(denom == 0, complex(np.inf, np.inf), out)


def gamma_eff(mode: MechanicalMode, controller: FeedbackController, gamma_opt: float = 0.0) -> float:
    """Effective damping ``Gamma_m + Im h(Omega_m) / (m Omega_m) + Gamma_opt``."""
    h = complex(h_total(controller, mode.omega_m))
    return mode.gamma_m + h.imag / (mode.mass * mode.omega_m) + gamma_opt


def cooling_phase(mode: MechanicalMode, controller: FeedbackController) -> float:
    """Controller phase that maximizes the feedback damping at the mechanical frequency.

    ``Im h(Omega_m)`` is sinusoidal in the main-stage phase, so the maximizer
    is unique modulo 2 pi; it is returned wrapped into (-pi, pi].
    """
    probe = replace(controller, gain=1.0, phase=0.0, aux_stages=())
    h0 = complex(h_main(probe, mode.omega_m))
    # Im(h0 exp(-i phi)) is maximal when arg(h0) - phi = pi/2
    phi = math.atan2(h0.imag, h0.real) - math.pi / 2
    return math.atan2(math.sin(phi), math.cos(phi))


def gain_for_damping(mode: MechanicalMode, controller: FeedbackController, extra_damping: float) -> float:
    """Main-stage gain giving feedback damping ``extra_damping`` (rad/s) at the current phase."""
    probe = replace(controller, gain=1.0, aux_stages=())
    per_unit = complex(h_main(probe, mode.omega_m)).imag / (mode.mass * mode.omega_m)
    if per_unit <= 0:
        raise ParameterError("controller phase does not damp the mode; use the cooling phase")
    return extra_damping / per_unit


def effective_resonance(mode: MechanicalMode, controller: FeedbackController, gamma_opt: float = 0.0) -> tuple[float, float]:
    """First-order resonance frequency and linewidth of the closed-loop mode."""
    h = complex(h_total(controller, mode.omega_m))
    omega_sq = mode.omega_m**2 - h.real / mode.mass
    omega_eff = math.sqrt(omega_sq) if omega_sq > 0 else mode.omega_m
    return omega_eff, gamma_eff(mode, controller, gamma_opt)
