"""Estimator-style fitters for every calibration and spectral fit.

All fitters follow the scikit-learn convention: hyperparameters go to the
constructor, ``fit(X, y)`` takes a 1-D independent variable and the data,
the outcome is stored in ``result_`` (a :class:`FitResult`) and
``predict(X)`` evaluates the fitted model.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import replace

import numpy as np
from scipy.integrate import trapezoid
from sklearn.base import BaseEstimator
from sklearn.utils import check_array, column_or_1d
from sklearn.utils.validation import check_consistent_length, check_is_fitted

from ..params import HBAR, K_B, TWO_PI, MechanicalMode, ParameterError, derive_zero_point
from ..response import FeedbackController, h_total
from ..spectra import closed_loop_occupancy, noise_budget
from .optimize import Affine, FitResult, FitWarning, IllConditionedWarning, Log, check_conditioning, fit_curve

_OBJECTIVES = {"whittle": "gamma", "wls": "wls"}


def _as_1d(X) -> np.ndarray:
    x = check_array(X, ensure_2d=False, dtype=float)
    if x.ndim == 2:
        if x.shape[1] != 1:
            raise ValueError(f"expected a single feature column, got shape {x.shape}")
        x = x[:, 0]
    return x


def _validate(X, y):
    x = _as_1d(X)
    y = column_or_1d(check_array(y, ensure_2d=False, dtype=float))
    check_consistent_length(x, y)
    return x, y


class _Fitter(BaseEstimator):
    model_id = ""

    def fit(self, X, y):
        x, y = _validate(X, y)
        self.n_features_in_ = 1
        self.result_ = self._fit(x, y)
        self.result_.model = self.model_id
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        return self._model(_as_1d(X), self.result_.estimates)

    @property
    def estimates_(self) -> dict:
        check_is_fitted(self, "result_")
        out = dict(zip(self.result_.names, map(float, self.result_.estimates)))
        out.update({k: v[0] for k, v in self.result_.derived.items()})
        return out

    def _fit(self, x, y) -> FitResult:
        raise NotImplementedError

    def _model(self, x, p):
        raise NotImplementedError


def _initial(initial, names, guess):
    """Merge user-supplied starting values over automatic guesses."""
    values = dict(guess)
    if initial:
        unknown = set(initial) - set(names)
        if unknown:
            raise ValueError(f"unknown initial parameter(s): {sorted(unknown)}")
        values.update(initial)
    return [values[n] for n in names]


# ---------------------------------------------------------------- spectra


class LorentzianFitter(_Fitter):
    """Lorentzian peak on an imprecision floor, fitted to a periodogram.

    ``S_yy = |chi_eff|^2 S_FF + S_imp`` with free ``omega_eff``, ``gamma_eff``
    (rad/s) and the noise quanta ``n_tot``, ``n_imp``. Quanta are referenced to
    the bare ``mode`` (``S_FF = 8 p_zpf^2 Gamma_m n_tot``,
    ``S_imp = 8 x_zpf^2 n_imp / Gamma_m``). ``X`` is frequency in Hz.
    """

    model_id = "lorentzian"
    names = ("omega_eff", "gamma_eff", "n_tot", "n_imp")

    def __init__(self, mode: MechanicalMode | None = None, averages: int = 1, objective: str = "whittle",
                 initial: dict | None = None, max_iter: int = 200):
        self.mode = mode
        self.averages = averages
        self.objective = objective
        self.initial = initial
        self.max_iter = max_iter

    def _units(self):
        if self.mode is None:
            raise ValueError("LorentzianFitter needs the bare mechanical mode")
        zp = derive_zero_point(self.mode)
        return 8.0 * zp.p_zpf**2 * self.mode.gamma_m, 8.0 * zp.x_zpf**2 / self.mode.gamma_m

    def _model(self, x, p):
        w_eff, g_eff, n_tot, n_imp = p
        f_unit, x_unit = self._units()
        omega = TWO_PI * x
        chi2 = 1.0 / (self.mode.mass**2 * ((w_eff**2 - omega**2) ** 2 + (g_eff * omega) ** 2))
        return chi2 * f_unit * n_tot + x_unit * n_imp

    def _guess(self, x, y):
        f_unit, x_unit = self._units()
        k = max(1, min(5, x.size // 50))
        smooth = np.convolve(y, np.ones(k) / k, mode="same")
        floor = float(np.median(np.sort(y)[: max(1, y.size // 5)]))
        i_pk = int(np.argmax(smooth))
        w0 = TWO_PI * x[i_pk]
        height = max(smooth[i_pk] - floor, floor * 1e-3)
        area = float(trapezoid(np.clip(y - floor, 0, None), x))
        g0 = max(4.0 * area / height, TWO_PI * (x[-1] - x[0]) / x.size)
        n_tot = height * self.mode.mass**2 * g0**2 * w0**2 / f_unit
        return {"omega_eff": w0, "gamma_eff": g0, "n_tot": n_tot, "n_imp": floor / x_unit}

    def _fit(self, x, y):
        if self.objective not in _OBJECTIVES:
            raise ValueError(f"objective must be one of {sorted(_OBJECTIVES)}, got {self.objective!r}")
        if not self.averages >= 1:
            raise ParameterError("averages must be >= 1")
        p0 = _initial(self.initial, self.names, self._guess(x, y))
        transforms = (Affine(p0[0], p0[1]), Log(), Log(), Log())
        return fit_curve(self._model, x, y, p0, self.names, transforms=transforms,
                         family=_OBJECTIVES[self.objective], shape=self.averages,
                         max_iter=self.max_iter, model_id=self.model_id)


class ClosedLoopFitter(_Fitter):
    """In-loop spectrum under feedback with free ``g_fb``, ``phase``, ``n_imp``, ``n_tot``.

    The controller shape (filter, delay, auxiliary sections) and the loaded
    mechanical mode come from ``params`` and ``controller``. After the fit the
    out-of-loop occupation implied by the fitted values is reported as the
    derived quantity ``nbar`` (with a delta-method error when
    ``occupancy_errors`` is set). ``X`` is frequency in Hz.
    """

    model_id = "closed-loop"
    names = ("g_fb", "phase", "n_imp", "n_tot")

    def __init__(self, params=None, controller: FeedbackController | None = None, averages: int = 1,
                 objective: str = "whittle", initial: dict | None = None, max_iter: int = 200,
                 occupancy_errors: bool = True):
        self.params = params
        self.controller = controller
        self.averages = averages
        self.objective = objective
        self.initial = initial
        self.max_iter = max_iter
        self.occupancy_errors = occupancy_errors

    def _units(self):
        zp = self.params.zero_point
        g_m = self.params.mode.gamma_m
        return 8.0 * zp.p_zpf**2 * g_m, 8.0 * zp.x_zpf**2 / g_m

    def _controller(self, p):
        return replace(self.controller, gain=float(p[0]), phase=float(p[1]))

    def _model(self, x, p):
        f_unit, x_unit = self._units()
        mode = self.params.loaded_mode
        omega = TWO_PI * x
        chi = 1.0 / (mode.mass * (mode.omega_m**2 - omega**2 - 1j * mode.gamma_m * omega))
        h = h_total(self._controller(p), omega)
        chi_e = chi / (1.0 - chi * h)
        return np.abs(chi_e) ** 2 * (f_unit * p[3] + x_unit * p[2] / np.abs(chi) ** 2)

    def _budget(self, p):
        f_unit, x_unit = self._units()
        base = noise_budget(self.params)
        return replace(base, s_ff_tot=f_unit * p[3], s_xx_imp=x_unit * p[2], n_imp=p[2], n_tot=p[3])

    def _fit(self, x, y):
        if self.params is None or self.controller is None:
            raise ValueError("ClosedLoopFitter needs params and controller")
        if self.objective not in _OBJECTIVES:
            raise ValueError(f"objective must be one of {sorted(_OBJECTIVES)}, got {self.objective!r}")
        budget = noise_budget(self.params)
        guess = {"g_fb": self.controller.gain, "phase": self.controller.phase,
                 "n_imp": budget.n_imp, "n_tot": budget.n_tot}
        p0 = _initial(self.initial, self.names, guess)
        transforms = (Log(), Affine(p0[1], 0.1), Log(), Log())
        result = fit_curve(self._model, x, y, p0, self.names, transforms=transforms,
                           family=_OBJECTIVES[self.objective], shape=self.averages,
                           max_iter=self.max_iter, model_id=self.model_id)
        result.derived["nbar"] = self._occupancy(result)
        return result

    def _nbar(self, p):
        return closed_loop_occupancy(self.params, self._controller(p), rtol=1e-7, budget=self._budget(p))[0]

    def _occupancy(self, result):
        p = np.asarray(result.estimates, dtype=float)
        nbar = self._nbar(p)
        if not self.occupancy_errors or result.covariance is None or not np.all(np.isfinite(result.covariance)):
            return nbar, math.nan
        grad = np.zeros(p.size)
        for i in range(p.size):
            step = 1e-4 * (abs(p[i]) if p[i] != 0 else 1.0)
            up, dn = p.copy(), p.copy()
            up[i] += step
            dn[i] -= step
            grad[i] = (self._nbar(up) - self._nbar(dn)) / (2 * step)
        return nbar, float(math.sqrt(max(grad @ result.covariance @ grad, 0.0)))


# ---------------------------------------------------------------- calibrations


class G0CalibrationFitter(_Fitter):
    """Vacuum coupling ``g0`` (rad/s) and bath temperature from a sideband-cooling series.

    ``y = 2 K / Omega_m^2 * g0^2 * (nbar + 1/2)`` where ``nbar`` is the
    weighted-bath occupation at optical damping ``X = Gamma_opt`` (rad/s) and
    ``K`` is the transduction factor. Noise is taken as multiplicative with
    an estimated dispersion.
    """

    model_id = "g0-calibration"
    names = ("g0", "temperature")

    def __init__(self, k_cal: float = 1.0, omega_m: float = 1.0, gamma_m: float = 1.0, nbar_min: float = 0.0,
                 initial: dict | None = None, max_iter: int = 200, condition_limit: float = 1e4):
        self.k_cal = k_cal
        self.omega_m = omega_m
        self.gamma_m = gamma_m
        self.nbar_min = nbar_min
        self.initial = initial
        self.max_iter = max_iter
        self.condition_limit = condition_limit

    def occupation(self, gamma_opt, temperature):
        n_th = 1.0 / math.expm1(HBAR * self.omega_m / (K_B * temperature))
        return (gamma_opt * self.nbar_min + self.gamma_m * n_th) / (gamma_opt + self.gamma_m)

    def _model(self, x, p):
        g0, temperature = p
        return 2.0 * self.k_cal / self.omega_m**2 * g0**2 * (self.occupation(x, temperature) + 0.5)

    def _guess(self, x, y):
        scale = 2.0 * self.k_cal / self.omega_m**2
        top = int(np.argmax(x))
        g0 = math.sqrt(y[top] / (scale * (self.occupation(x[top], 1e-6) + 0.5)))
        low = int(np.argmin(x))
        nbar = y[low] / (scale * g0**2) - 0.5
        n_th = (nbar * (x[low] + self.gamma_m) - x[low] * self.nbar_min) / self.gamma_m
        n_th = max(n_th, 1.0)
        return {"g0": g0, "temperature": HBAR * self.omega_m / (K_B * math.log1p(1.0 / n_th))}

    def _fit(self, x, y):
        if np.any(x < 0):
            raise ParameterError("optical damping rates must be >= 0")
        if np.any(y <= 0):
            raise ParameterError("variances must be positive")
        p0 = _initial(self.initial, self.names, self._guess(x, y))
        result = fit_curve(self._model, x, y, p0, self.names, transforms=(Log(), Log()),
                           family="gamma", max_iter=self.max_iter, model_id=self.model_id)
        rel = result.stderr / np.abs(result.estimates)
        check_conditioning(result, self.condition_limit)
        if result.condition < self.condition_limit and not np.all(rel < 0.5):
            warnings.warn("g0 and temperature are poorly separated by this dataset; "
                          "it needs both thermal and backaction-dominated points", IllConditionedWarning, stacklevel=3)
        return result


class HeatingFitter(_Fitter):
    """Occupation step after switching the feedback off at ``t = 0``.

    ``n(t) = n_i + theta(t) (n_f - n_i) (1 - exp(-Gamma_eff t))``. Derived
    outputs: ``gamma_tot = (n_f - n_i) Gamma_eff`` (the initial slope),
    ``coherence_time = 1 / gamma_tot`` and ``gamma_tot_final = n_f Gamma_eff``.
    """

    model_id = "heating"
    names = ("n_i", "n_f", "gamma_eff")

    def __init__(self, initial: dict | None = None, max_iter: int = 200):
        self.initial = initial
        self.max_iter = max_iter

    def _model(self, x, p):
        n_i, n_f, rate = p
        after = np.where(x > 0, 1.0 - np.exp(-rate * np.clip(x, 0, None)), 0.0)
        return n_i + (n_f - n_i) * after

    def _guess(self, x, y):
        post = x > 0
        pre = ~post
        n_i = float(np.median(y[pre])) if pre.any() else float(y[np.argmin(x)])
        tail = np.sort(x[post])[-max(1, post.sum() // 10):]
        n_f = float(np.median(y[np.isin(x, tail)]))
        target = n_i + (1 - math.exp(-1)) * (n_f - n_i)
        xs, ys = x[post], y[post]
        order = np.argsort(xs)
        crossing = np.nonzero((ys[order] - target) * np.sign(n_f - n_i) >= 0)[0]
        t_c = xs[order][crossing[0]] if crossing.size else xs.max() / 3
        return {"n_i": max(n_i, 1e-3), "n_f": max(n_f, 1e-3), "gamma_eff": 1.0 / max(t_c, 1e-12)}

    def _fit(self, x, y):
        if not np.any(x > 0):
            raise ParameterError("heating trace has no samples after the switch (t > 0)")
        if np.any(y <= 0):
            raise ParameterError("occupations must be positive")
        p0 = _initial(self.initial, self.names, self._guess(x, y))
        result = fit_curve(self._model, x, y, p0, self.names, transforms=(Log(), Log(), Log()),
                           family="gamma", max_iter=self.max_iter, model_id=self.model_id)
        n_i, n_f, rate = result.estimates
        cov = result.covariance
        grad = np.array([-rate, rate, n_f - n_i])
        gamma_tot = (n_f - n_i) * rate
        err = math.sqrt(max(grad @ cov @ grad, 0.0)) if np.all(np.isfinite(cov)) else math.nan
        grad_final = np.array([0.0, rate, n_f])
        err_final = math.sqrt(max(grad_final @ cov @ grad_final, 0.0)) if np.all(np.isfinite(cov)) else math.nan
        result.derived["gamma_tot"] = (float(gamma_tot), err)
        result.derived["coherence_time"] = (float(1.0 / gamma_tot), err / gamma_tot**2)
        result.derived["gamma_tot_final"] = (float(n_f * rate), err_final)
        return result


class RingdownFitter(_Fitter):
    """Quality factor from an amplitude ringdown ``x0 exp(-Omega_m t / (2 Q))``.

    A weighted linear regression of ``log x`` on ``t``; additive amplitude
    noise makes the log-variance scale as ``1 / x^2``, so weights are the
    squared fitted amplitudes (iterated). Non-monotone traces beyond the
    noise level raise a :class:`FitWarning`.
    """

    model_id = "ringdown"
    names = ("x0", "decay_rate")

    def __init__(self, omega_m: float = 1.0, iterations: int = 5, monotone_sigma: float = 5.0):
        self.omega_m = omega_m
        self.iterations = iterations
        self.monotone_sigma = monotone_sigma

    def _model(self, x, p):
        return p[0] * np.exp(-p[1] * x)

    def _fit(self, x, y):
        if np.any(y <= 0):
            raise ParameterError("ringdown amplitudes must be positive")
        if x.size < 3:
            raise ParameterError("ringdown needs at least 3 samples")
        design = np.column_stack([np.ones_like(x), -x])
        t_mid = float(np.mean(x))
        design[:, 1] += t_mid  # centre time for a well-conditioned solve
        weights = y**2
        logy = np.log(y)
        for _ in range(max(1, self.iterations)):
            wd = design * weights[:, None]
            coef = np.linalg.solve(design.T @ wd, wd.T @ logy)
            fitted = np.exp(design @ coef)
            weights = fitted**2
        resid = logy - design @ coef
        dof = max(x.size - 2, 1)
        s2 = float(np.sum(weights * resid**2) / dof)
        cov_c = np.linalg.inv(design.T @ (design * weights[:, None])) * s2
        # back to (log x0, rate): log x0 = c0 + rate * t_mid
        jac = np.array([[1.0, t_mid], [0.0, 1.0]])
        cov_l = jac @ cov_c @ jac.T
        log_x0 = coef[0] + coef[1] * t_mid
        rate = coef[1]
        x0 = math.exp(log_x0)
        d = np.array([x0, 1.0])
        cov = cov_l * np.outer(d, d)
        stderr = np.sqrt(np.clip(np.diag(cov), 0, None))
        q = self.omega_m / (2.0 * rate) if rate > 0 else math.inf
        q_err = q * stderr[1] / rate if rate > 0 else math.nan
        # robust noise scale so that a few outliers cannot hide themselves
        noise = 1.4826 * float(np.median(np.abs(np.sqrt(weights) * resid)))
        order = np.argsort(x)
        rises = np.diff(y[order])
        if np.any(rises > self.monotone_sigma * noise * math.sqrt(2) + 1e-300):
            warnings.warn("ringdown trace is not monotone beyond its noise level", FitWarning, stacklevel=3)
        result = FitResult(names=self.names, estimates=np.array([x0, rate]), stderr=stderr,
                           objective=0.5 * s2 * dof, converged=True, iterations=self.iterations,
                           reduced_objective=s2, covariance=cov, condition=float(np.linalg.cond(cov_c)) if s2 > 0 else math.nan,
                           model=self.model_id, method="weighted-log-linear")
        result.derived["q"] = (q, q_err)
        result.derived["amplitude_time"] = (1.0 / rate if rate > 0 else math.inf, stderr[1] / rate**2 if rate > 0 else math.nan)
        return result


def _irls_linear(design, y, iterations=6):
    """Linear model with multiplicative noise: weights ``1 / f^2``, dispersion estimated."""
    scale = np.linalg.norm(design, axis=0)
    scale[scale == 0] = 1.0
    a = design / scale
    weights = 1.0 / y**2
    for _ in range(iterations):
        sw = np.sqrt(weights)
        coef = np.linalg.lstsq(a * sw[:, None], y * sw, rcond=None)[0]
        fitted = a @ coef
        safe = np.where(np.abs(fitted) > 0, fitted, y)
        weights = 1.0 / safe**2
    resid = (y - fitted) / safe
    dof = max(y.size - design.shape[1], 1)
    disp = float(np.sum(resid**2) / dof)
    info = a.T @ (a * weights[:, None])
    cov = np.linalg.inv(info) * disp / np.outer(scale, scale)
    return coef / scale, cov, disp, float(np.linalg.cond(info))


class AmplitudeNoiseFitter(_Fitter):
    """Parabola ``c + a P + b P^2`` for detected variance against optical power.

    ``a`` is the shot-noise slope and ``b`` the classical (technical) term;
    the derived ``classical_ratio`` is ``b P_ref / a``, the classical noise in
    units of shot noise at ``reference_power``.
    """

    model_id = "amplitude-noise"

    def __init__(self, reference_power: float = 1e-6, offset: bool = True):
        self.reference_power = reference_power
        self.offset = offset

    @property
    def names(self):
        return ("offset", "shot", "classical") if self.offset else ("shot", "classical")

    def _design(self, x):
        cols = [x, x**2]
        if self.offset:
            cols.insert(0, np.ones_like(x))
        return np.column_stack(cols)

    def _model(self, x, p):
        return self._design(x) @ np.asarray(p)

    def _fit(self, x, y):
        if x.size < 3:
            raise ParameterError("amplitude-noise fit needs at least 3 power points")
        if np.any(y <= 0):
            raise ParameterError("variances must be positive")
        design = self._design(x)
        coef, cov, disp, cond = _irls_linear(design, y)
        stderr = np.sqrt(np.clip(np.diag(cov), 0, None))
        a, b = coef[-2], coef[-1]
        if a < 0:
            warnings.warn(f"fitted shot-noise term is negative ({a:.3g})", FitWarning, stacklevel=3)
        ratio = b * self.reference_power / a
        g = np.zeros(coef.size)
        g[-2] = -b * self.reference_power / a**2
        g[-1] = self.reference_power / a
        result = FitResult(names=self.names, estimates=coef, stderr=stderr, objective=0.5 * disp * max(y.size - coef.size, 1),
                           converged=True, iterations=6, reduced_objective=disp, covariance=cov, condition=cond,
                           model=self.model_id, method="iteratively-reweighted-least-squares")
        result.derived["classical_ratio"] = (float(ratio), float(math.sqrt(max(g @ cov @ g, 0.0))))
        return result


def classical_phase_noise_spectrum(detuning, omega, eta_c: float, kappa: float, c_xx: float, c_yy: float):
    """Shot-noise-relative amplitude noise behind a filter cavity with input classical noise.

    ``c_xx`` and ``c_yy`` are the classical amplitude and phase noise of the
    input in shot-noise units; the cavity rotates phase into amplitude noise
    away from resonance.
    """
    if not 0.0 <= eta_c <= 1.0:
        raise ParameterError(f"eta_c must lie in [0, 1], got {eta_c!r}")
    d2 = np.asarray(detuning, dtype=float) ** 2
    w2 = np.asarray(omega, dtype=float) ** 2
    if not np.all(np.isfinite(d2)):
        raise ParameterError("detuning must be finite")
    k2 = (kappa / 2.0) ** 2
    pref = 4.0 * (1.0 - eta_c) * eta_c * kappa**2 / (d2 + k2)
    num = ((d2 + k2) ** 2 + k2 * w2) * c_xx + d2 * w2 * c_yy
    den = d2**2 + 2.0 * d2 * (k2 - w2) + (k2 + w2) ** 2
    return 1.0 + pref * num / den


class PhaseNoiseFitter(_Fitter):
    """Classical phase noise ``c_yy`` from a detuning sweep with ``c_xx`` held fixed.

    ``X`` is detuning (rad/s), ``y`` shot-noise-relative variance.
    """

    model_id = "phase-noise"
    names = ("c_yy",)

    def __init__(self, omega: float = 1.0, eta_c: float = 0.5, kappa: float = 1.0, c_xx: float = 0.0):
        self.omega = omega
        self.eta_c = eta_c
        self.kappa = kappa
        self.c_xx = c_xx

    def _model(self, x, p):
        return classical_phase_noise_spectrum(x, self.omega, self.eta_c, self.kappa, self.c_xx, p[0])

    def _fit(self, x, y):
        base = self._model(x, [0.0])
        slope = self._model(x, [1.0]) - base
        if not np.any(slope > 0):
            raise ParameterError("no detuning point is sensitive to phase noise (all at zero detuning?)")
        # weights follow the total variance, not the phase-noise part alone
        weights = 1.0 / y**2
        for _ in range(6):
            num = np.sum(weights * slope * (y - base))
            den = np.sum(weights * slope**2)
            c_yy = num / den
            fitted = base + slope * c_yy
            weights = 1.0 / fitted**2
        dof = max(y.size - 1, 1)
        disp = float(np.sum(((y - fitted) / fitted) ** 2) / dof)
        var = disp / den
        return FitResult(names=self.names, estimates=np.array([c_yy]), stderr=np.array([math.sqrt(var)]),
                         objective=0.5 * disp * dof, converged=True, iterations=6, reduced_objective=disp,
                         covariance=np.array([[var]]), condition=1.0, model=self.model_id,
                         method="iteratively-reweighted-least-squares")


FITTERS = {
    "lorentzian": LorentzianFitter,
    "closed-loop": ClosedLoopFitter,
    "g0-calibration": G0CalibrationFitter,
    "heating": HeatingFitter,
    "ringdown": RingdownFitter,
    "amplitude-noise": AmplitudeNoiseFitter,
    "phase-noise": PhaseNoiseFitter,
}
