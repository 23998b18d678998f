import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from fbcool.params import MechanicalMode, ParameterError
from fbcool.response import (
    AuxStage,
    BandpassStage,
    FeedbackController,
    chi_eff,
    chi_m,
    cooling_phase,
    effective_resonance,
    gain_for_damping,
    gamma_eff,
    h_aux,
    h_main,
    h_total,
)

MODE = MechanicalMode(omega_m=1.0, gamma_m=0.3, mass=2.0)


@pytest.mark.parametrize("omega", [0.4, 0.97, 1.0, 1.8])
def test_chi_is_fourier_transform_of_impulse_response(omega):
    # causal Green's function of m x'' + m G x' + m w0^2 x = F, transformed with exp(+i W t)
    w1 = math.sqrt(MODE.omega_m**2 - MODE.gamma_m**2 / 4)

    def green(t):
        return math.exp(-MODE.gamma_m * t / 2) * math.sin(w1 * t) / (MODE.mass * w1)

    re = quad(green, 0, np.inf, weight="cos", wvar=omega)[0]
    im = quad(green, 0, np.inf, weight="sin", wvar=omega)[0]
    assert complex(chi_m(MODE, omega)) == pytest.approx(complex(re, im), rel=1e-7)


def test_chi_static_limit_and_resonance():
    assert complex(chi_m(MODE, 0.0)) == pytest.approx(1 / (MODE.mass * MODE.omega_m**2))
    at_res = complex(chi_m(MODE, MODE.omega_m))
    assert at_res.real == pytest.approx(0.0, abs=1e-15)
    assert at_res.imag == pytest.approx(1 / (MODE.mass * MODE.gamma_m * MODE.omega_m))


def test_bandpass_center_and_peak():
    for order in (1, 2, 3, 4):
        stage = BandpassStage(omega_c=5.0, gamma_bw=0.5, order=order)
        assert complex(stage.response(5.0)) == pytest.approx(1j**order)
        w = np.linspace(0.01, 20, 5001)
        assert np.max(np.abs(stage.response(w))) <= 1 + 1e-12


def test_bandpass_validation():
    with pytest.raises(ParameterError):
        BandpassStage(0.0, 1.0)
    with pytest.raises(ParameterError):
        BandpassStage(1.0, 1.0, order=0)


def _controller(gain=1.0, phase=0.3, delay=0.05, aux=()):
    return FeedbackController(gain, phase, delay, BandpassStage(1.1, 0.4, 2), aux)


@settings(max_examples=50)
@given(st.floats(0.01, 50), st.floats(-math.pi, math.pi), st.floats(0, 0.2))
def test_controller_is_real_valued_filter(omega, phase, delay):
    ctrl = _controller(phase=phase, delay=delay, aux=(AuxStage(BandpassStage(3.0, 0.2), 0.4, 1.0),))
    pos, neg = complex(h_total(ctrl, omega)), complex(h_total(ctrl, -omega))
    assert neg == pytest.approx(pos.conjugate(), abs=1e-14)


def test_aux_stages_add_linearly():
    aux = (AuxStage(BandpassStage(3.0, 0.2), 0.4, 1.0), AuxStage(BandpassStage(0.5, 0.1), 0.2, -1.0))
    ctrl = _controller(aux=aux)
    w = np.linspace(0.1, 5, 50)
    assert np.allclose(h_total(ctrl, w), h_main(ctrl, w) + h_aux(ctrl, w))
    assert np.allclose(h_aux(_controller(), w), 0)


def test_delay_is_a_pure_phase():
    w = np.linspace(0.1, 5, 50)
    a, b = h_main(_controller(delay=0.0), w), h_main(_controller(delay=0.3), w)
    assert np.allclose(np.abs(a), np.abs(b))
    assert np.allclose(b / a, np.exp(1j * w * 0.3))


def test_cooling_phase_maximizes_damping():
    ctrl = _controller()
    best = cooling_phase(MODE, ctrl)
    phases = np.linspace(-math.pi, math.pi, 3601)
    damping = [complex(h_main(ctrl.with_phase(p), MODE.omega_m)).imag for p in phases]
    assert complex(h_main(ctrl.with_phase(best), MODE.omega_m)).imag >= max(damping) - 1e-9
    assert -math.pi < best <= math.pi


def test_device_cooling_phase(params, controller):
    assert controller.phase == pytest.approx(cooling_phase(params.loaded_mode, controller))
    h = complex(h_main(controller.with_gain(1.0), params.loaded_mode.omega_m))
    assert math.atan2(h.imag, h.real) == pytest.approx(math.pi / 2, abs=1e-9)


@given(st.floats(1e-4, 10.0))
def test_gain_for_damping_inverts_gamma_eff(extra):
    ctrl = _controller()
    ctrl = ctrl.with_phase(cooling_phase(MODE, ctrl))
    g = gain_for_damping(MODE, ctrl, extra)
    assert gamma_eff(MODE, ctrl.with_gain(g)) - MODE.gamma_m == pytest.approx(extra, rel=1e-10)


def test_gain_for_damping_needs_cooling_phase():
    ctrl = _controller()
    anti = ctrl.with_phase(cooling_phase(MODE, ctrl) + math.pi)
    with pytest.raises(ParameterError):
        gain_for_damping(MODE, anti, 0.1)


def test_chi_eff_reduces_to_chi_without_gain():
    w = np.linspace(0.2, 3, 101)
    assert np.allclose(chi_eff(MODE, _controller(gain=0.0), w), chi_m(MODE, w))


def test_chi_eff_matches_closed_loop_algebra():
    ctrl = _controller(gain=0.2)
    w = np.linspace(0.2, 3, 101)
    chi, h = chi_m(MODE, w), h_total(ctrl, w)
    assert np.allclose(1 / chi_eff(MODE, ctrl, w), 1 / chi - h)


def test_effective_resonance_for_pure_damping():
    ctrl = _controller(gain=0.05)
    ctrl = ctrl.with_phase(cooling_phase(MODE, ctrl))
    w_eff, g_eff = effective_resonance(MODE, ctrl)
    # a cooling-phase force at resonance is purely dissipative
    assert w_eff == pytest.approx(MODE.omega_m, rel=1e-9)
    assert g_eff > MODE.gamma_m
