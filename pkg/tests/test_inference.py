import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

import scenarios
from fbcool.inference import (
    FITTERS,
    AmplitudeNoiseFitter,
    FitWarning,
    G0CalibrationFitter,
    HeatingFitter,
    IllConditionedWarning,
    LorentzianFitter,
    PhaseNoiseFitter,
    RingdownFitter,
    classical_phase_noise_spectrum,
    fit_curve,
    make_rng,
    monte_carlo,
    spawn,
    synth_periodogram,
)
from fbcool.inference.optimize import Affine, Log, check_conditioning
from fbcool.params import ParameterError, hz
from fbcool.spectra import Spectrum


# ---------------------------------------------------------------- random streams


def test_streams_are_reproducible_and_distinct():
    a = make_rng(7, 0).standard_normal(5)
    assert np.array_equal(a, make_rng(7, 0).standard_normal(5))
    assert not np.array_equal(a, make_rng(7, 1).standard_normal(5))
    assert not np.array_equal(a, make_rng(8, 0).standard_normal(5))
    assert len(spawn(3, 4)) == 4


def test_monte_carlo_is_thread_invariant():
    def draw(rng, i):
        return (i, float(rng.standard_normal()))

    assert monte_carlo(draw, 16, seed=5, threads=1) == monte_carlo(draw, 16, seed=5, threads=4)


def _flat(n=20000):
    return Spectrum(np.arange(1.0, n + 1.0), np.full(n, 3.0), "m^2/Hz")


@pytest.mark.parametrize("averages", [1, 10, 100])
def test_periodogram_bins_follow_gamma(averages):
    data = synth_periodogram(_flat(), averages, seed=11)
    ks = stats.kstest(data.ratio, stats.gamma(a=averages, scale=1 / averages).cdf)
    assert ks.pvalue > 0.01


def test_periodogram_determinism_and_validation():
    a = synth_periodogram(_flat(100), 5, seed=1)
    b = synth_periodogram(_flat(100), 5, seed=1)
    assert np.array_equal(a.realized.values, b.realized.values)
    assert np.array_equal(a.frequency, a.expected.frequency)
    with pytest.raises(ParameterError):
        synth_periodogram(_flat(10), 0, seed=1)


# ---------------------------------------------------------------- optimizer


def test_linear_gaussian_fit_matches_polyfit():
    rng = make_rng(0)
    x = np.linspace(0, 1, 50)
    y = 1.5 - 0.7 * x + 0.05 * rng.standard_normal(x.size)
    res = fit_curve(lambda x, p: p[0] + p[1] * x, x, y, [0.0, 0.0], ["a", "b"])
    coef, cov = np.polyfit(x, y, 1, cov=True)
    assert res.converged
    assert res["a"] == pytest.approx(coef[1], rel=1e-8)
    assert res["b"] == pytest.approx(coef[0], rel=1e-8)
    assert res.error("b") == pytest.approx(math.sqrt(cov[0, 0]), rel=1e-4)


def test_known_sigma_gives_unscaled_errors():
    x = np.linspace(0, 1, 40)
    y = 2.0 + 0.0 * x
    res = fit_curve(lambda x, p: p[0] + 0 * x, x, y, [1.0], ["c"], sigma=0.5)
    assert res.error("c") == pytest.approx(0.5 / math.sqrt(40), rel=1e-5)


@pytest.mark.parametrize("averages", [1, 10])
def test_gamma_family_constant_level(averages):
    # MLE of a flat spectrum is the sample mean, with Fisher error level / sqrt(n N)
    rng = make_rng(3)
    y = 4.0 * rng.gamma(averages, 1 / averages, size=4000)
    res = fit_curve(lambda x, p: np.full_like(x, p[0]), np.arange(y.size), y, [1.0], ["level"],
                    transforms=[Log()], family="gamma", shape=averages)
    assert res["level"] == pytest.approx(y.mean(), rel=1e-8)
    assert res.error("level") == pytest.approx(y.mean() / math.sqrt(y.size * averages), rel=1e-3)


def test_transforms_round_trip():
    assert Log().inverse(Log().forward(3.0)) == pytest.approx(3.0)
    aff = Affine(10.0, 2.0)
    assert aff.inverse(aff.forward(7.0)) == pytest.approx(7.0)
    assert aff.derivative(0.0) == 2.0


def test_fit_curve_validation():
    with pytest.raises(ValueError):
        fit_curve(lambda x, p: x, [1.0], [1.0], [1.0, 2.0], ["a"])
    with pytest.raises(ValueError):
        fit_curve(lambda x, p: x, [1.0], [-1.0], [1.0], ["a"], family="gamma")
    with pytest.raises(ValueError):
        fit_curve(lambda x, p: x, [1.0], [1.0], [1.0], ["a"], family="poisson")


def test_non_finite_start_falls_back():
    x = np.linspace(1, 2, 20)
    res = fit_curve(lambda x, p: np.full_like(x, p[0]), x, np.full(20, 2.0), [-1.0], ["c"], family="gamma")
    assert not res.converged
    assert "non-finite" in res.message


def test_result_serialization():
    x = np.linspace(0, 1, 10)
    res = fit_curve(lambda x, p: p[0] * x, x, 2 * x, [1.0], ["k"], model_id="line")
    d = res.as_dict()
    assert d["estimates"]["k"] == pytest.approx(2.0)
    assert d["model"] == "line" and d["converged"]


def test_conditioning_warning():
    x = np.linspace(0, 1, 30)
    y = 1 + x
    res = fit_curve(lambda x, p: (p[0] + p[1]) * x + 1, x, y, [0.2, 0.3], ["a", "b"], fallback=False)
    with pytest.warns(IllConditionedWarning):
        check_conditioning(res)


# ---------------------------------------------------------------- estimator API


@pytest.mark.parametrize("name", sorted(FITTERS))
def test_estimator_protocol(name):
    est = FITTERS[name]()
    assert set(est.get_params()) >= set()
    assert clone(est).get_params() == est.get_params()
    with pytest.raises(NotFittedError):
        est.predict([1.0, 2.0])


@pytest.mark.parametrize("name", sorted(scenarios.SCENARIOS))
def test_round_trip_single_seed(name):
    fitter, x, y, truth = scenarios.SCENARIOS[name](0)
    fitter.fit(x, y)
    assert fitter.result_.converged
    for param, value in truth.items():
        assert scenarios.within(fitter.result_, param, value, k=4.0), (param, fitter.result_[param], value)
    assert fitter.predict(x).shape == np.asarray(y).shape
    assert fitter.result_.model == name
    assert set(truth) <= set(fitter.estimates_)


def test_initial_values_are_honoured():
    fitter, x, y, _ = scenarios.heating(0)
    fitter.set_params(initial={"gamma_eff": 20.0}).fit(x, y)
    assert fitter.result_.converged
    with pytest.raises(ValueError):
        HeatingFitter(initial={"bogus": 1.0}).fit(x, y)


def test_two_column_input_is_rejected():
    with pytest.raises(ValueError):
        RingdownFitter().fit(np.ones((5, 2)), np.ones(5))
    with pytest.raises(ValueError):
        RingdownFitter().fit(np.arange(5.0), np.ones(4))


@pytest.mark.parametrize("averages", [20, 200])
def test_whittle_and_wls_agree(averages):
    est = {}
    for objective in ("whittle", "wls"):
        fitter, x, y, truth = scenarios.lorentzian(4, averages=averages, objective=objective, bins=4001)
        est[objective] = fitter.fit(x, y).result_
    w, l = est["whittle"], est["wls"]
    for name in ("gamma_eff", "n_tot", "n_imp"):
        # weighting by the data biases levels by about 1/N
        assert abs(l[name] / w[name] - 1) < 2.0 / averages


def test_lorentzian_needs_mode_and_valid_objective():
    with pytest.raises(ValueError):
        LorentzianFitter().fit(np.linspace(1, 2, 10), np.ones(10))
    fitter, x, y, _ = scenarios.lorentzian(0, bins=401)
    with pytest.raises(ValueError):
        fitter.set_params(objective="ls").fit(x, y)


def test_g0_degenerate_design_warns():
    # only thermally dominated points: g0 and temperature enter as one product
    fitter, x, clean = scenarios.g0_design(p_lo=0.025e-6, p_hi=0.1e-6, points=6)
    y = clean * (1 + 0.03 * make_rng(1).standard_normal(clean.size))
    with pytest.warns(IllConditionedWarning):
        fitter.fit(x, y)


def test_g0_good_design_is_quiet():
    fitter, x, y, _ = scenarios.g0_calibration(0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fitter.fit(x, y)
    assert fitter.result_.condition < fitter.condition_limit


def test_g0_domain():
    with pytest.raises(ParameterError):
        G0CalibrationFitter().fit([-1.0, 1.0, 2.0], [1.0, 1.0, 1.0])


def test_heating_needs_post_switch_samples():
    t = np.linspace(-1.0, 0.0, 20)
    with pytest.raises(ParameterError):
        HeatingFitter().fit(t, np.full(t.size, 2.0))


def test_heating_derived_quantities():
    fitter, t, y, truth = scenarios.heating(1)
    r = fitter.fit(t, y).result_
    assert r["coherence_time"] == pytest.approx(1 / r["gamma_tot"])
    assert r["gamma_tot_final"] == pytest.approx(r["n_f"] * r["gamma_eff"])
    assert 1 / truth["gamma_tot"] == pytest.approx(756e-6, rel=1e-3)


def test_ringdown_non_monotone_warns():
    t = np.linspace(0, 10, 200)
    y = np.exp(-0.2 * t)
    y[100:110] += 0.5
    with pytest.warns(FitWarning):
        RingdownFitter(omega_m=1.0).fit(t, y)


def test_ringdown_exact_decay():
    t = np.linspace(0, 5, 50)
    r = RingdownFitter(omega_m=hz(1.139e6)).fit(t, 2.0 * np.exp(-0.3 * t)).result_
    assert r["decay_rate"] == pytest.approx(0.3, rel=1e-10)
    assert r["x0"] == pytest.approx(2.0, rel=1e-10)
    assert r["q"] == pytest.approx(hz(1.139e6) / 0.6, rel=1e-10)
    with pytest.raises(ParameterError):
        RingdownFitter().fit([0.0, 1.0, 2.0], [1.0, 0.0, 0.5])


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-3, 1e3))
def test_amplitude_fit_is_scale_equivariant(scale):
    fitter, p, y, _ = scenarios.amplitude_noise(2)
    base = clone(fitter).fit(p, y).result_
    scaled = clone(fitter).fit(p, scale * y).result_
    assert np.allclose(scaled.estimates, scale * base.estimates, rtol=1e-6, atol=1e-12 * scale)
    assert scaled["classical_ratio"] == pytest.approx(base["classical_ratio"], rel=1e-6)
    assert scaled.error("classical_ratio") == pytest.approx(base.error("classical_ratio"), rel=1e-5)


def test_amplitude_negative_shot_warns():
    p = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    with pytest.warns(FitWarning):
        AmplitudeNoiseFitter(reference_power=1.0).fit(p, 10 - 1.0 * p + 0.5 * p**2)


def test_amplitude_without_offset():
    p = np.array([1.0, 2.0, 3.0, 4.0])
    fit = AmplitudeNoiseFitter(reference_power=1.0, offset=False).fit(p, 2 * p + 0.1 * p**2)
    assert fit.result_.names == ("shot", "classical")
    assert fit.result_["classical_ratio"] == pytest.approx(0.05)


F = scenarios.PHASE_FILTER


@given(st.floats(0.0, 10.0), st.floats(0.0, 10.0))
def test_phase_noise_is_invisible_on_resonance(c_xx, c_yy):
    a = classical_phase_noise_spectrum(0.0, F["omega"], F["eta_c"], F["kappa"], c_xx, c_yy)
    b = classical_phase_noise_spectrum(0.0, F["omega"], F["eta_c"], F["kappa"], c_xx, 0.0)
    assert a == pytest.approx(b, rel=1e-14)


def test_phase_noise_limits():
    far = classical_phase_noise_spectrum(hz(1e6), 1e15, F["eta_c"], F["kappa"], 0.1, 0.1)
    assert far == pytest.approx(1.0, abs=1e-12)
    # a lossless or fully absorbing filter passes only shot noise
    for eta in (0.0, 1.0):
        assert classical_phase_noise_spectrum(hz(1e6), F["omega"], eta, F["kappa"], 0.1, 0.1) == 1.0
    with pytest.raises(ParameterError):
        classical_phase_noise_spectrum(0.0, 1.0, 1.5, 1.0, 0.0, 0.0)


def test_phase_noise_needs_detuned_points():
    with pytest.raises(ParameterError):
        PhaseNoiseFitter(**F).fit([0.0, 0.0, 0.0], [1.0, 1.0, 1.0])
