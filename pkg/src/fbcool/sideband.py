"""Dynamical backaction of a detuned drive and the sideband-cooling limit."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import HBAR, ParameterError, SystemParams


def _lorentz_terms(kappa, detuning, omega_m):
    half = (kappa / 2.0) ** 2
    plus = (detuning + omega_m) ** 2 + half
    minus = (detuning - omega_m) ** 2 + half
    return plus, minus


def spring_shift(kappa: float, detuning: float, g_aux, omega_m: float):
    """Optical spring ``delta Omega_m`` (rad/s) for field-enhanced coupling ``g_aux``."""
    g_aux = np.asarray(g_aux, dtype=float)
    if np.any(g_aux < 0):
        raise ParameterError("g_aux must be >= 0")
    plus, minus = _lorentz_terms(kappa, detuning, omega_m)
    return g_aux**2 * ((detuning + omega_m) / plus + (detuning - omega_m) / minus)


def gamma_opt(kappa: float, detuning: float, g_aux, omega_m: float):
    """Optical damping rate (rad/s); positive for red detuning."""
    g_aux = np.asarray(g_aux, dtype=float)
    if np.any(g_aux < 0):
        raise ParameterError("g_aux must be >= 0")
    plus, minus = _lorentz_terms(kappa, detuning, omega_m)
    return g_aux**2 * (kappa / plus - kappa / minus)


def nbar_min(kappa: float, detuning: float, omega_m: float) -> float:
    """Quantum-backaction limit of sideband cooling (needs red detuning)."""
    if not detuning < 0:
        raise ParameterError(f"sideband cooling needs detuning < 0, got {detuning!r}")
    return ((omega_m + detuning) ** 2 + (kappa / 2.0) ** 2) / (-4.0 * detuning * omega_m)


def optimal_detuning(kappa: float, omega_m: float) -> float:
    """Detuning minimizing :func:`nbar_min`."""
    return -math.sqrt(omega_m**2 + (kappa / 2.0) ** 2)


def nbar_sideband(gamma_opt, nbar_min, gamma_m, n_th):
    """Occupation of a mode coupled to its thermal bath and to the optical bath."""
    gamma_opt = np.asarray(gamma_opt, dtype=float)
    if np.any(gamma_opt < 0) or gamma_m < 0:
        raise ParameterError("rates must be non-negative")
    total = gamma_opt + gamma_m
    if np.any(total == 0):
        raise ParameterError("at least one of gamma_opt, gamma_m must be positive")
    return (gamma_opt * nbar_min + gamma_m * n_th) / total


def coupling_from_power(power, g0_aux: float, kappa: float, eta_c: float, omega_laser: float):
    """Field-enhanced coupling from transmitted power, ``g^2 = g0^2 P / (hbar w_L kappa eta_c)``."""
    power = np.asarray(power, dtype=float)
    return np.sqrt(g0_aux**2 * power / (HBAR * omega_laser * kappa * eta_c))


@dataclass(frozen=True)
class DecoherenceBudget:
    thermal: float
    probe: float
    aux: float

    @property
    def total(self) -> float:
        return self.thermal + self.probe + self.aux


def decoherence_budget(params: SystemParams, c_q: float | None = None, gamma_opt_aux: float | None = None) -> DecoherenceBudget:
    """Heating rates (phonons/s) from the bath, the probe backaction and the auxiliary beam.

    The auxiliary channel is the optical bath's heating ``Gamma_opt n_min``;
    it needs a red-detuned auxiliary drive unless ``gamma_opt_aux`` is 0.
    """
    thermal = params.n_th * params.mode.gamma_m
    probe = thermal * c_q if c_q is not None else params.rates.gamma_qba
    g_opt = params.gamma_opt if gamma_opt_aux is None else gamma_opt_aux
    aux = 0.0
    if g_opt > 0:
        if params.aux is None:
            raise ParameterError("auxiliary decoherence needs an auxiliary drive")
        aux = g_opt * nbar_min(params.aux.kappa, params.aux.detuning, params.mode.omega_m)
    return DecoherenceBudget(thermal=thermal, probe=probe, aux=aux)


def sideband_sweep(params: SystemParams, powers, g_ref: float, p_ref: float) -> dict:
    """Sweep over auxiliary power with ``g_aux^2`` proportional to power.

    Returns arrays keyed ``power``, ``gamma_opt``, ``spring_shift``, ``nbar``,
    ``gamma_tot`` (angular rates, phonons/s for ``gamma_tot``).
    """
    if params.aux is None:
        raise ParameterError("sideband sweep needs an auxiliary drive")
    aux = params.aux
    powers = np.asarray(powers, dtype=float)
    g_aux = g_ref * np.sqrt(powers / p_ref)
    w_m = params.mode.omega_m
    g_opt = gamma_opt(aux.kappa, aux.detuning, g_aux, w_m)
    shift = spring_shift(aux.kappa, aux.detuning, g_aux, w_m)
    n_min = nbar_min(aux.kappa, aux.detuning, w_m)
    nbar = nbar_sideband(g_opt, n_min, params.mode.gamma_m, params.n_th)
    return {
        "power": powers,
        "gamma_opt": g_opt,
        "spring_shift": shift,
        "nbar": nbar,
        "gamma_tot": nbar * (g_opt + params.mode.gamma_m),
    }
