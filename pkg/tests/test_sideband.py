import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from fbcool.params import HBAR, ParameterError, hz
from fbcool.sideband import (
    coupling_from_power,
    decoherence_budget,
    gamma_opt,
    nbar_min,
    nbar_sideband,
    optimal_detuning,
    sideband_sweep,
    spring_shift,
)

KAPPA, DELTA, OMEGA = hz(12.9e6), hz(-4.2e6), hz(1.139e6)


def scattering_rates(kappa, detuning, g, omega_m):
    # Stokes / anti-Stokes rates from the cavity density of states
    anti = g**2 * kappa / ((detuning + omega_m) ** 2 + kappa**2 / 4)
    stokes = g**2 * kappa / ((detuning - omega_m) ** 2 + kappa**2 / 4)
    return anti, stokes


def test_nbar_min_from_scattering_rates():
    anti, stokes = scattering_rates(KAPPA, DELTA, 1.0, OMEGA)
    assert nbar_min(KAPPA, DELTA, OMEGA) == pytest.approx(stokes / (anti - stokes), rel=1e-12)
    assert gamma_opt(KAPPA, DELTA, 1.0, OMEGA) == pytest.approx(anti - stokes, rel=1e-12)


def test_resolved_sideband_limit():
    kappa = 1e-3 * OMEGA
    assert nbar_min(kappa, -OMEGA, OMEGA) == pytest.approx((kappa / (4 * OMEGA)) ** 2, rel=1e-12)


@given(st.floats(0.05, 20.0), st.floats(-3.0, -0.05))
def test_optimal_detuning_minimizes(kappa_ratio, delta_ratio):
    kappa = kappa_ratio * OMEGA
    best = optimal_detuning(kappa, OMEGA)
    assert nbar_min(kappa, best, OMEGA) <= nbar_min(kappa, delta_ratio * OMEGA, OMEGA) * (1 + 1e-12)


def test_optimal_detuning_numeric():
    res = minimize_scalar(lambda d: nbar_min(KAPPA, d * OMEGA, OMEGA), bounds=(-20, -0.01), method="bounded",
                          options={"xatol": 1e-10})
    assert optimal_detuning(KAPPA, OMEGA) == pytest.approx(res.x * OMEGA, rel=1e-6)


def test_blue_detuning_is_rejected():
    with pytest.raises(ParameterError):
        nbar_min(KAPPA, 0.0, OMEGA)
    with pytest.raises(ParameterError):
        gamma_opt(KAPPA, DELTA, -1.0, OMEGA)


def test_damping_and_spring_signs():
    assert gamma_opt(KAPPA, DELTA, 1.0, OMEGA) > 0
    assert gamma_opt(KAPPA, -DELTA, 1.0, OMEGA) < 0
    assert spring_shift(KAPPA, DELTA, 1.0, OMEGA) < 0
    assert gamma_opt(KAPPA, 0.0, 1e6, OMEGA) == 0.0


def test_nbar_sideband_weighted_bath():
    assert nbar_sideband(0.0, 2.6, 1.0, 100.0) == 100.0
    assert nbar_sideband(1e12, 2.6, 1.0, 100.0) == pytest.approx(2.6, rel=1e-9)
    assert nbar_sideband(1.0, 2.0, 1.0, 4.0) == 3.0
    with pytest.raises(ParameterError):
        nbar_sideband(0.0, 1.0, 0.0, 1.0)


def test_coupling_from_power_scales_as_sqrt():
    g1 = coupling_from_power(1e-6, hz(127.0), KAPPA, 0.88, hz(2.1e14))
    g4 = coupling_from_power(4e-6, hz(127.0), KAPPA, 0.88, hz(2.1e14))
    assert g4 == pytest.approx(2 * g1, rel=1e-14)
    expected = np.sqrt(hz(127.0) ** 2 * 1e-6 / (HBAR * hz(2.1e14) * KAPPA * 0.88))
    assert g1 == pytest.approx(expected)


def test_sweep_approaches_quantum_limit(params):
    powers = np.logspace(-9, -2, 8)
    sweep = sideband_sweep(params, powers, hz(24e3), 1e-6)
    n = sweep["nbar"]
    assert np.all(np.diff(n) < 0)
    assert n[-1] == pytest.approx(nbar_min(KAPPA, DELTA, OMEGA), rel=1e-2)
    assert n[0] < params.n_th


def test_decoherence_budget(params):
    budget = decoherence_budget(params, c_q=2.4)
    assert budget.probe == pytest.approx(2.4 * budget.thermal)
    assert budget.aux == pytest.approx(hz(10.0) * nbar_min(KAPPA, DELTA, OMEGA))
    assert budget.total == pytest.approx(budget.thermal + budget.probe + budget.aux)
    assert decoherence_budget(params).probe == pytest.approx(params.rates.gamma_qba)
