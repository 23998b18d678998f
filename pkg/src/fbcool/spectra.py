"""Noise budgets, displacement spectra and occupancies.

PSDs are symmetrized and single-sided, in units per ordinary Hz. With these
conventions the force noise of a bath of occupation ``n`` coupled at rate
``Gamma`` is ``8 p_zpf^2 Gamma (n + 1/2)`` and the imprecision of a
measurement at rate ``Gamma_meas`` is ``x_zpf^2 / (2 Gamma_meas)``, so that

* ``n_imp = Gamma_m / (16 Gamma_meas)``
* ``eta = 1 / (16 n_imp n_tot) = hbar^2 / (S_xx^imp S_FF^tot)``
* the open-loop occupation integrates to ``n_tot - 1/2``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .params import HBAR, TWO_PI, SystemParams, ZeroPoint
from .quadrature import integrate_peaked, integrate_sampled, peak_grid
from .response import FeedbackController, chi_eff, chi_m, effective_resonance, h_total

UNITS = ("m^2/Hz", "N^2/Hz", "quanta", "shot-noise-relative", "ratio")


class InstabilityError(RuntimeError):
    """The closed loop is unstable; stationary spectra do not exist."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class QuadratureWarning(UserWarning):
    """Spectrum grid truncates a non-negligible part of the integrand."""


@dataclass(frozen=True)
class Spectrum:
    """PSD samples on an ascending grid of ordinary frequencies (Hz)."""

    frequency: np.ndarray
    values: np.ndarray
    unit: str

    def __post_init__(self):
        f = np.asarray(self.frequency, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if f.ndim != 1 or f.shape != v.shape:
            raise ValueError("frequency and values must be 1-D arrays of equal length")
        if np.any(np.diff(f) <= 0):
            raise ValueError("frequency grid must be strictly ascending")
        if self.unit not in UNITS:
            raise ValueError(f"unknown unit {self.unit!r}; expected one of {UNITS}")
        if np.any(v < 0) and self.unit != "ratio":
            raise ValueError("PSD values must be non-negative")
        object.__setattr__(self, "frequency", f)
        object.__setattr__(self, "values", v)

    @property
    def omega(self) -> np.ndarray:
        return TWO_PI * self.frequency

    def __len__(self):
        return self.frequency.size


@dataclass(frozen=True)
class NoiseBudget:
    s_xx_imp: float
    s_ff_th: float
    s_ff_aux: float
    s_ff_qba: float
    s_ff_tot: float
    n_imp: float
    n_tot: float
    eta: float
    heisenberg_product: float

    def as_dict(self) -> dict:
        return asdict(self)


def _force_unit(params: SystemParams) -> float:
    zp = params.zero_point
    return 8.0 * zp.p_zpf**2 * params.mode.gamma_m


def force_budget(params: SystemParams) -> dict:
    """Thermal, auxiliary-beam and probe-backaction force PSDs (N^2/Hz)."""
    zp = params.zero_point
    s_th = 8.0 * zp.p_zpf**2 * params.mode.gamma_m * (params.n_th + 0.5)
    s_aux = params.aux_ratio * s_th
    s_qba = 8.0 * zp.p_zpf**2 * params.rates.gamma_qba
    s_tot = s_th + s_aux + s_qba
    return {"s_ff_th": s_th, "s_ff_aux": s_aux, "s_ff_qba": s_qba, "s_ff_tot": s_tot,
            "n_tot": s_tot / _force_unit(params)}


def imprecision(params: SystemParams) -> tuple[float, float]:
    """Imprecision PSD (m^2/Hz) and its quanta ``n_imp``; infinite without measurement."""
    gamma_meas = params.rates.gamma_meas
    if gamma_meas <= 0:
        warnings.warn("measurement rate is zero: imprecision is infinite", RuntimeWarning, stacklevel=2)
        return math.inf, math.inf
    zp = params.zero_point
    n_imp = params.mode.gamma_m / (16.0 * gamma_meas)
    return zp.x_zpf**2 / (2.0 * gamma_meas), n_imp


def noise_budget(params: SystemParams) -> NoiseBudget:
    forces = force_budget(params)
    s_imp, n_imp = imprecision(params)
    n_tot = forces["n_tot"]
    if math.isinf(n_tot):
        # infinitely strong probe: backaction and imprecision both saturate the rates
        eta = params.eta_det
    elif math.isfinite(n_imp):
        eta = 1.0 / (16.0 * n_imp * n_tot)
    else:
        eta = 0.0
    product = 1.0 / math.sqrt(eta) if eta > 0 else math.inf
    return NoiseBudget(
        s_xx_imp=s_imp,
        s_ff_th=forces["s_ff_th"],
        s_ff_aux=forces["s_ff_aux"],
        s_ff_qba=forces["s_ff_qba"],
        s_ff_tot=forces["s_ff_tot"],
        n_imp=n_imp,
        n_tot=n_tot,
        eta=eta,
        heisenberg_product=product,
    )


def efficiency_from_rates(params: SystemParams) -> float:
    """Budget efficiency from rates, ``Gamma_meas / (Gamma_qba + Gamma_aux + gamma)``.

    Here the thermal and auxiliary decoherence rates include the zero-point
    half quantum, ``gamma = Gamma_m (n_th + 1/2)``, matching the force PSDs.
    """
    rates = params.rates
    gamma = params.mode.gamma_m * (params.n_th + 0.5)
    return rates.gamma_meas / (rates.gamma_qba + params.aux_ratio * gamma + gamma)


def default_grid(params: SystemParams, controller: FeedbackController | None = None, n: int = 8001) -> np.ndarray:
    """Angular grid around the effective resonance.

    Spans ``Omega_m +/- 50 max(Gamma_eff, Gamma_fb)``, clipped to
    ``(0, 2 Omega_fb)`` when a controller is present.
    """
    mode = params.loaded_mode
    if controller is None:
        center, width = mode.omega_m, mode.gamma_m
        half = 50.0 * width
        lo, hi = max(center - half, 1e-6 * center), center + half
    else:
        center, width = effective_resonance(mode, controller)
        half = 50.0 * max(width, controller.main.gamma_bw)
        lo = max(params.mode.omega_m - half, 1e-3 * params.mode.omega_m)
        hi = min(params.mode.omega_m + half, 2.0 * controller.main.omega_c)
        width = max(width, mode.gamma_m)
    return peak_grid(center, width, lo, hi, n)


def _as_omega(grid) -> np.ndarray:
    return np.asarray(grid, dtype=float)


def syy_open(params: SystemParams, grid) -> Spectrum:
    """Measured displacement PSD without feedback, on an angular grid (rad/s)."""
    omega = _as_omega(grid)
    budget = noise_budget(params)
    chi = chi_m(params.loaded_mode, omega)
    values = np.abs(chi) ** 2 * budget.s_ff_tot + budget.s_xx_imp
    return Spectrum(omega / TWO_PI, values, "m^2/Hz")


def sxx_open(params: SystemParams, grid) -> Spectrum:
    omega = _as_omega(grid)
    budget = noise_budget(params)
    values = np.abs(chi_m(params.loaded_mode, omega)) ** 2 * budget.s_ff_tot
    return Spectrum(omega / TWO_PI, values, "m^2/Hz")


def _closed_loop_values(params: SystemParams, controller: FeedbackController, omega, which: str,
                        budget: NoiseBudget | None = None):
    if budget is None:
        budget = noise_budget(params)
    mode = params.loaded_mode
    chi = chi_m(mode, omega)
    ce = chi_eff(mode, controller, omega)
    if which == "xx":
        h = h_total(controller, omega)
        return np.abs(ce) ** 2 * (budget.s_ff_tot + np.abs(h) ** 2 * budget.s_xx_imp)
    return np.abs(ce) ** 2 * (budget.s_ff_tot + budget.s_xx_imp / np.abs(chi) ** 2)


def _require_stable(params, controller, check_stability):
    if not check_stability:
        return
    from .feedback import stability_check

    report = stability_check(params, controller)
    if not report.stable:
        raise InstabilityError(f"closed loop is unstable: {report.diagnostic}", report)


def sxx_closed(params: SystemParams, controller: FeedbackController, grid, check_stability: bool = True) -> Spectrum:
    """Out-of-loop (actual) displacement PSD under feedback."""
    _require_stable(params, controller, check_stability)
    omega = _as_omega(grid)
    return Spectrum(omega / TWO_PI, _closed_loop_values(params, controller, omega, "xx"), "m^2/Hz")


def syy_closed(params: SystemParams, controller: FeedbackController, grid, check_stability: bool = True) -> Spectrum:
    """In-loop (measured) displacement PSD under feedback."""
    _require_stable(params, controller, check_stability)
    omega = _as_omega(grid)
    return Spectrum(omega / TWO_PI, _closed_loop_values(params, controller, omega, "yy"), "m^2/Hz")


def occupancy(sxx: Spectrum, zero_point: ZeroPoint, rtol: float = 1e-3) -> float:
    """Phonon occupation ``int S_xx / (2 x_zpf^2) df - 1/2`` from a sampled spectrum.

    Warns with :class:`QuadratureWarning` when the estimated integration
    error, including the extrapolated tails, exceeds ``rtol``.
    """
    if sxx.unit != "m^2/Hz":
        raise ValueError(f"occupancy needs a displacement PSD in m^2/Hz, got {sxx.unit}")
    if not np.any(sxx.values > 0):
        return -0.5
    result = integrate_sampled(sxx.frequency, sxx.values)
    if result.error > rtol * abs(result.value):
        warnings.warn(
            f"occupancy integral uncertain: error {result.error:.3g} vs value {result.value:.3g} "
            f"(extrapolated tail {result.tail:.3g})",
            QuadratureWarning,
            stacklevel=2,
        )
    return result.value / (2.0 * zero_point.x_zpf**2) - 0.5


def closed_loop_occupancy(params: SystemParams, controller: FeedbackController, rtol: float = 1e-6,
                          span_hz: tuple | None = None, budget: NoiseBudget | None = None) -> tuple[float, float]:
    """Occupation under feedback by adaptive quadrature of the model ``S_xx``.

    Returns ``(nbar, error)``. No stability check is made here. ``budget``
    overrides the noise levels derived from ``params`` (e.g. fitted values).
    """
    mode = params.loaded_mode
    center, width = effective_resonance(mode, controller)
    width = max(abs(width), mode.gamma_m)
    if span_hz is None:
        half = 50.0 * max(width, controller.main.gamma_bw)
        lo = max(params.mode.omega_m - half, 1e-3 * params.mode.omega_m)
        hi = min(params.mode.omega_m + half, 2.0 * controller.main.omega_c)
    else:
        lo, hi = TWO_PI * span_hz[0], TWO_PI * span_hz[1]
    peaks = [(center / TWO_PI, width / TWO_PI), (controller.main.omega_c / TWO_PI, controller.main.gamma_bw / TWO_PI)]
    x2 = params.zero_point.x_zpf**2

    def integrand(f):
        return _closed_loop_values(params, controller, TWO_PI * f, "xx", budget) / (2.0 * x2)

    result = integrate_peaked(integrand, peaks, lo / TWO_PI, hi / TWO_PI, rtol=rtol)
    return result.value - 0.5, result.error


def equipartition_check(params: SystemParams, controller: FeedbackController | None, grid=None) -> float:
    """Relative difference between momentum and position variances in zero-point units.

    Uses ``S_pp / p_zpf^2 = (Omega / Omega_m)^2 S_xx / x_zpf^2``.
    """
    if grid is None:
        grid = default_grid(params, controller, n=20001)
    omega = _as_omega(grid)
    if controller is None:
        sxx = sxx_open(params, omega)
    else:
        sxx = sxx_closed(params, controller, omega)
    return equipartition_from_spectrum(sxx, params.mode.omega_m)


def equipartition_from_spectrum(sxx: Spectrum, omega_m: float) -> float:
    var_x = integrate_sampled(sxx.frequency, sxx.values, tails=False).value
    weight = (sxx.omega / omega_m) ** 2
    var_p = integrate_sampled(sxx.frequency, weight * sxx.values, tails=False).value
    return abs(var_p - var_x) / var_x


@dataclass(frozen=True)
class SQLReport:
    ratio: Spectrum
    minimum: float
    offset: float
    offset_below: float
    analytic_minimum: float


def sql_metrics(params: SystemParams, grid=None) -> SQLReport:
    """Open-loop ``S_yy`` relative to the standard quantum limit ``2 hbar |chi|``.

    The SQL is referenced to the same (optically loaded) susceptibility that
    shapes ``S_yy``, so the minimum over frequency equals the Heisenberg
    product ``sqrt(S_xx^imp S_FF^tot) / hbar`` exactly. Offsets (rad/s) are
    measured from the loaded resonance, above and below it.
    """
    budget = noise_budget(params)
    mode = params.loaded_mode
    a, b = budget.s_ff_tot, budget.s_xx_imp
    if grid is None:
        width = mode.gamma_m * math.sqrt(budget.n_tot / budget.n_imp) if budget.n_imp > 0 else mode.gamma_m
        grid = peak_grid(mode.omega_m, width, mode.omega_m - 20 * width, mode.omega_m + 20 * width, 20001)
    omega = _as_omega(grid)
    chi_abs = np.abs(chi_m(mode, omega))
    ratio = (chi_abs**2 * a + b) / (2.0 * HBAR * chi_abs)

    # |chi|^2 = b / a  <=>  (W^2)^2 - (2 W0^2 - G^2) W^2 + W0^4 - a / (b m^2) = 0
    w0, g, m = mode.omega_m, mode.gamma_m, mode.mass
    p = 2 * w0**2 - g**2
    q = w0**4 - a / (b * m**2)
    disc = p**2 / 4 - q
    upper = math.sqrt(p / 2 + math.sqrt(disc))
    lower_sq = p / 2 - math.sqrt(disc)
    lower = math.sqrt(lower_sq) if lower_sq > 0 else 0.0
    analytic = math.sqrt(a * b) / HBAR
    chi_at = abs(complex(chi_m(mode, upper)))
    minimum = (chi_at**2 * a + b) / (2.0 * HBAR * chi_at)
    return SQLReport(
        ratio=Spectrum(omega / TWO_PI, ratio, "ratio"),
        minimum=float(min(minimum, ratio.min())),
        offset=upper - w0,
        offset_below=w0 - lower,
        analytic_minimum=analytic,
    )
