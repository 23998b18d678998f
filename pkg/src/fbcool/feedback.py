"""Closed-loop analysis: stability, gain sweeps, cooling limits and heating transients."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .params import ParameterError, SystemParams
from .quadrature import peak_grid
from .response import (
    FeedbackController,
    cooling_phase,
    effective_resonance,
    gain_for_damping,
    gamma_eff,
    h_total,
    loop_gain,
)
from .spectra import closed_loop_occupancy, noise_budget, syy_closed


class NoStableRegionError(RuntimeError):
    pass


@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    winding: int
    min_return_difference: float
    omega_at_min: float
    points: int
    diagnostic: str = ""


def nyquist_grid(params: SystemParams, controller: FeedbackController, n: int = 200_000) -> np.ndarray:
    """Hybrid grid: log-spaced from ``Omega_m / 1e3`` to ``10 kappa`` plus dense
    clusters around every mechanical mode and every filter center."""
    modes = (params.loaded_mode, *params.extra_modes)
    w_lo = params.mode.omega_m / 1e3
    w_hi = 10.0 * max(params.probe.kappa, controller.main.omega_c)
    n_log = n // 2
    parts = [np.geomspace(w_lo, w_hi, n_log)]
    stages = [controller.main] + [aux.stage for aux in controller.aux_stages]
    n_cluster = max((n - n_log) // (len(modes) + len(stages)), 1001)
    for mode in modes:
        parts.append(peak_grid(mode.omega_m, mode.gamma_m, w_lo, w_hi, n_cluster))
    for stage in stages:
        parts.append(peak_grid(stage.omega_c, stage.gamma_bw, w_lo, w_hi, n_cluster))
    return np.unique(np.concatenate(parts))


def _refine(grid: np.ndarray, mask: np.ndarray) -> np.ndarray:
    mids = 0.5 * (grid[:-1] + grid[1:])[mask]
    return np.unique(np.concatenate([grid, mids]))


def stability_check(params: SystemParams, controller: FeedbackController, grid=None,
                    max_phase_step: float = math.pi / 4, tol: float = 1e-9,
                    max_refinements: int = 30) -> StabilityReport:
    """Nyquist test on the return difference ``1 - L(Omega)``.

    ``L`` is analytic in the upper half plane and vanishes at zero and
    infinite frequency, so the number of closed-loop poles in the unstable
    half plane equals the winding of ``1 - L`` over the whole real axis,
    i.e. twice its phase advance over positive frequencies divided by 2 pi.
    """
    modes = (params.loaded_mode, *params.extra_modes)
    omega = nyquist_grid(params, controller) if grid is None else np.unique(np.asarray(grid, dtype=float))
    if np.all(controller.gain == 0) and not controller.aux_stages:
        return StabilityReport(True, 0, 1.0, float(omega[0]), omega.size, "no feedback")

    for _ in range(max_refinements):
        ret = 1.0 - loop_gain(modes, controller, omega)
        phase = np.angle(ret)
        step = np.abs(np.angle(ret[1:] / ret[:-1]))
        coarse = step > max_phase_step
        # zoom in around the closest approach to the critical point as well
        i_min = int(np.argmin(np.abs(ret)))
        near_min = np.zeros_like(coarse)
        near_min[max(i_min - 3, 0):i_min + 3] = True
        if not coarse.any():
            if near_min.any() and omega.size < 5_000_000 and _needs_zoom(ret, i_min):
                omega = _refine(omega, near_min)
                continue
            break
        omega = _refine(omega, coarse | near_min)
    else:
        raise RuntimeError("Nyquist grid too coarse after refinement; phase steps exceed pi/4")

    unwrapped = np.unwrap(phase)
    advance = (unwrapped[-1] - unwrapped[0]) / (2.0 * math.pi)
    winding = int(round(2.0 * advance))
    i_min = int(np.argmin(np.abs(ret)))
    min_ret = float(np.abs(ret[i_min]))
    stable = winding == 0 and min_ret > tol
    if winding != 0:
        diag = f"{winding} closed-loop pole(s) in the unstable half plane"
    elif not min_ret > tol:
        diag = "return difference touches zero: on the stability boundary"
    else:
        diag = "stable"
    return StabilityReport(stable, winding, min_ret, float(omega[i_min]), omega.size, diag)


def _needs_zoom(ret, i_min) -> bool:
    # a sharp, deep minimum that the grid may be straddling
    if i_min == 0 or i_min == ret.size - 1:
        return False
    local = np.abs(ret[i_min - 1:i_min + 2])
    return local[1] < 1e-2 and (local[0] > 2 * local[1] or local[2] > 2 * local[1])


def nbar_est(eta_det: float, c_q: float) -> float:
    """Occupation of the optimally estimated state, ``(sqrt(1/eta) - 1) / 2``."""
    if not 0 < eta_det <= 1:
        raise ParameterError(f"eta_det must lie in (0, 1], got {eta_det!r}")
    if not c_q > 0:
        raise ParameterError(f"c_q must be > 0, got {c_q!r}")
    if math.isinf(c_q):
        return 0.5 * (math.sqrt(1.0 / eta_det) - 1.0)
    return 0.5 * math.sqrt((c_q + 1.0) / (eta_det * c_q)) - 0.5


def cooling_controller(params: SystemParams, controller: FeedbackController) -> FeedbackController:
    """Copy of ``controller`` with its phase set to the cooling phase."""
    return controller.with_phase(cooling_phase(params.loaded_mode, controller))


@dataclass(frozen=True)
class GainPoint:
    gain: float
    gamma_eff: float
    nbar: float
    stable: bool
    squashing: bool
    error: float = 0.0


@dataclass
class GainSweepResult:
    points: list = field(default_factory=list)

    @property
    def gains(self) -> np.ndarray:
        return np.array([p.gain for p in self.points])

    @property
    def nbar(self) -> np.ndarray:
        return np.array([p.nbar for p in self.points])

    @property
    def stable(self) -> np.ndarray:
        return np.array([p.stable for p in self.points])

    def best(self) -> GainPoint:
        stable = [p for p in self.points if p.stable]
        if not stable:
            raise NoStableRegionError("no stable gain in sweep")
        return min(stable, key=lambda p: p.nbar)


def evaluate_gain(params: SystemParams, controller: FeedbackController, gain: float,
                  rtol: float = 1e-6) -> GainPoint:
    ctrl = controller.with_gain(gain)
    mode = params.loaded_mode
    g_eff = gamma_eff(params.mode, ctrl, params.gamma_opt)
    report = stability_check(params, ctrl)
    if not report.stable:
        return GainPoint(gain, g_eff, math.nan, False, False)
    nbar, err = closed_loop_occupancy(params, ctrl, rtol=rtol)
    # squashing: in-loop spectrum dips below the imprecision floor at resonance
    omega_eff, _ = effective_resonance(mode, ctrl)
    syy = syy_closed(params, ctrl, np.array([omega_eff]), check_stability=False).values[0]
    squash = bool(syy < noise_budget(params).s_xx_imp)
    return GainPoint(gain, g_eff, nbar, True, squash, err)


def sweep_gain(params: SystemParams, controller: FeedbackController, gains, threads: int = 1,
               rtol: float = 1e-6) -> GainSweepResult:
    """Occupancy versus gain; unstable points are flagged and carry ``nan``."""
    gains = [float(g) for g in gains]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            points = list(pool.map(lambda g: evaluate_gain(params, controller, g, rtol), gains))
    else:
        points = [evaluate_gain(params, controller, g, rtol) for g in gains]
    return GainSweepResult(points)


def damping_scale(params: SystemParams) -> float:
    """Feedback damping at which imprecision heating balances force noise (rad/s)."""
    budget = noise_budget(params)
    return params.mode.gamma_m * math.sqrt(budget.n_tot / budget.n_imp)


def default_gains(params: SystemParams, controller: FeedbackController, n: int = 41,
                  decades: tuple = (-2.0, 2.0)) -> np.ndarray:
    scale = damping_scale(params)
    damping = scale * np.logspace(decades[0], decades[1], n)
    return np.array([gain_for_damping(params.mode, controller, d) for d in damping])


@dataclass(frozen=True)
class OptimalGain:
    gain: float
    nbar: float
    error: float
    gamma_eff: float
    sweep: GainSweepResult


def optimal_gain(params: SystemParams, controller: FeedbackController, gains=None, threads: int = 1,
                 rtol: float = 1e-7) -> OptimalGain:
    """Minimum occupancy over gain: coarse sweep, then golden-section in log gain."""
    if gains is None:
        gains = default_gains(params, controller)
    sweep = sweep_gain(params, controller, gains, threads=threads, rtol=1e-5)
    stable_idx = [i for i, p in enumerate(sweep.points) if p.stable]
    if not stable_idx:
        raise NoStableRegionError("no stable gain found; cannot optimize")
    i_best = min(stable_idx, key=lambda i: sweep.points[i].nbar)
    log_g = np.log(sweep.gains)

    def objective(lg):
        point = evaluate_gain(params, controller, math.exp(lg), rtol)
        return point.nbar if point.stable else math.inf

    n = len(sweep.points)
    neighbours_ok = 0 < i_best < n - 1 and sweep.points[i_best - 1].stable and sweep.points[i_best + 1].stable
    if neighbours_ok:
        res = minimize_scalar(objective, bracket=(log_g[i_best - 1], log_g[i_best], log_g[i_best + 1]),
                              method="golden", tol=1e-6)
        best_g, best_n = math.exp(res.x), float(res.fun)
    else:
        best_g, best_n = float(sweep.gains[i_best]), float(sweep.points[i_best].nbar)
    final = evaluate_gain(params, controller, best_g, rtol)
    return OptimalGain(best_g, final.nbar, final.error, final.gamma_eff, sweep)


def cooling_limits(params: SystemParams, controller: FeedbackController, c_qs, threads: int = 1) -> dict:
    """Minimum occupancy of the given filter and the optimal-estimation bound versus ``C_q``."""
    c_qs = np.asarray(c_qs, dtype=float)
    filt = []
    for c_q in c_qs:
        p = params.with_cooperativity(c_q)
        ctrl = cooling_controller(p, controller)
        filt.append(optimal_gain(p, ctrl, threads=threads).nbar)
    est = np.array([nbar_est(params.eta_det, c) for c in c_qs])
    return {"c_q": c_qs, "nbar_filter_min": np.array(filt), "nbar_est": est}


def instability_onset(params: SystemParams, controller: FeedbackController, g_lo: float, g_hi: float,
                      rel_tol: float = 1e-10) -> float:
    """Bisect the smallest gain flagged unstable between a stable ``g_lo`` and unstable ``g_hi``."""
    if not stability_check(params, controller.with_gain(g_lo)).stable:
        raise ValueError("g_lo must be stable")
    if stability_check(params, controller.with_gain(g_hi)).stable:
        raise ValueError("g_hi must be unstable")
    while g_hi - g_lo > rel_tol * g_hi:
        mid = math.sqrt(g_lo * g_hi)
        if stability_check(params, controller.with_gain(mid)).stable:
            g_lo = mid
        else:
            g_hi = mid
    return g_hi


@dataclass(frozen=True)
class HeatingTrace:
    time: np.ndarray
    nbar: np.ndarray
    n_i: float
    n_f: float
    gamma_eff: float

    @property
    def gamma_tot(self) -> float:
        """Heating rate out of the initial state, ``(n_f - n_i) Gamma_eff``."""
        return (self.n_f - self.n_i) * self.gamma_eff

    @property
    def initial_slope(self) -> float:
        return self.gamma_tot


def heating_curve(t, n_i, n_f, gamma_eff):
    t = np.asarray(t, dtype=float)
    step = np.where(t > 0, 1.0, 0.0)
    return n_i + step * (n_f - n_i) * -np.expm1(-gamma_eff * np.clip(t, 0, None))


def heating_transient(n_i: float, n_f: float, gamma_eff: float, t) -> HeatingTrace:
    """Relaxation of the occupation after the feedback is switched off at ``t = 0``."""
    if not gamma_eff > 0:
        raise ParameterError(f"gamma_eff must be > 0, got {gamma_eff!r}")
    t = np.asarray(t, dtype=float)
    return HeatingTrace(t, heating_curve(t, n_i, n_f, gamma_eff), n_i, n_f, gamma_eff)
