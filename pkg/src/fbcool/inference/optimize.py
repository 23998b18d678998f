"""Maximum-likelihood curve fitting with Levenberg-Marquardt (Fisher scoring).

Two noise families are supported:

``gaussian``
    additive noise with known ``sigma`` (or unknown, estimated from residuals);
``gamma``
    multiplicative noise, samples ``y ~ f * Gamma(N, 1/N)``. For averaged
    periodograms with ``N`` averages this is the Whittle likelihood. With
    ``shape=None`` the dispersion is estimated from the residuals;
``wls``
    weighted least squares with variance ``f^2 / N``, the large-``N`` limit
    of ``gamma``.

Parameters are optimized in a transformed space (``Log`` for positive
quantities, ``Affine`` to put scales near unity) and reported in natural
units. Standard errors come from the inverse observed information.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize


class FitWarning(UserWarning):
    pass


class IllConditionedWarning(FitWarning):
    pass


@dataclass(frozen=True)
class Log:
    def forward(self, p):
        return math.log(p)

    def inverse(self, t):
        return math.exp(t)

    def derivative(self, t):
        return math.exp(t)


@dataclass(frozen=True)
class Affine:
    loc: float = 0.0
    scale: float = 1.0

    def forward(self, p):
        return (p - self.loc) / self.scale

    def inverse(self, t):
        return self.loc + self.scale * t

    def derivative(self, t):
        return self.scale


IDENTITY = Affine()


@dataclass
class FitResult:
    names: tuple
    estimates: np.ndarray
    stderr: np.ndarray
    objective: float
    converged: bool
    iterations: int
    reduced_objective: float = math.nan
    covariance: Optional[np.ndarray] = None
    condition: float = math.nan
    model: str = ""
    method: str = "levenberg-marquardt"
    seed: Optional[int] = None
    derived: dict = field(default_factory=dict)
    message: str = ""

    def __getitem__(self, name: str) -> float:
        if name in self.derived:
            return self.derived[name][0]
        return float(self.estimates[self.names.index(name)])

    def error(self, name: str) -> float:
        if name in self.derived:
            return self.derived[name][1]
        return float(self.stderr[self.names.index(name)])

    def as_dict(self) -> dict:
        est = {n: float(v) for n, v in zip(self.names, self.estimates)}
        err = {n: float(v) for n, v in zip(self.names, self.stderr)}
        for n, (v, e) in self.derived.items():
            est[n] = float(v)
            err[n] = float(e)
        return {
            "model": self.model,
            "estimates": est,
            "stderr": err,
            "objective": float(self.objective),
            "reduced_objective": float(self.reduced_objective),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "condition": float(self.condition),
            "method": self.method,
            "seed": self.seed,
            "message": self.message,
        }


class _Likelihood:
    def __init__(self, model, x, y, family, sigma, shape):
        self.model, self.x, self.y = model, x, y
        self.family = family
        if family == "gaussian":
            self.sigma = np.ones_like(y) if sigma is None else np.broadcast_to(np.asarray(sigma, float), y.shape)
        elif family in ("gamma", "wls"):
            if np.any(y < 0):
                raise ValueError("gamma family needs non-negative data")
            self.shape = 1.0 if shape is None else float(shape)
            # saturated-model offset keeps the objective O(n) and numerically well scaled
            pos = y[y > 0]
            self.offset = float(np.sum(np.log(pos) + 1.0))
        else:
            raise ValueError(f"unknown noise family {family!r}")

    def nll(self, f) -> float:
        if self.family == "gaussian":
            return 0.5 * float(np.sum(((self.y - f) / self.sigma) ** 2))
        if np.any(f <= 0) or not np.all(np.isfinite(f)):
            return math.inf
        if self.family == "wls":
            return 0.5 * self.shape * float(np.sum((self.y / f - 1.0) ** 2))
        return self.shape * (float(np.sum(np.log(f) + self.y / f)) - self.offset)

    def score_info(self, f, jac):
        """Gradient of the nll and expected (Fisher) information."""
        if self.family == "gaussian":
            w = 1.0 / self.sigma**2
            grad = -jac.T @ (w * (self.y - f))
            info = jac.T @ (w[:, None] * jac)
        elif self.family == "wls":
            r = self.y / f - 1.0
            grad = -self.shape * jac.T @ (r * self.y / f**2)
            info = self.shape * jac.T @ (jac * (self.y / f**2)[:, None] ** 2)
        else:
            grad = self.shape * jac.T @ (1.0 / f - self.y / f**2)
            info = self.shape * jac.T @ (jac / f[:, None] ** 2)
        return grad, info

    def deviance(self, f) -> float:
        if self.family == "gaussian":
            return float(np.sum(((self.y - f) / self.sigma) ** 2))
        return 2.0 * self.nll(f)

    def dispersion(self, f, n_params) -> float:
        dof = max(self.y.size - n_params, 1)
        if self.family == "gaussian":
            return float(np.sum(((self.y - f) / self.sigma) ** 2)) / dof
        return float(np.sum(((self.y - f) / f) ** 2)) / dof * self.shape


def _numeric_jacobian(fun, theta, rel_step=1e-6):
    f0 = fun(theta)
    jac = np.empty((f0.size, theta.size))
    for i in range(theta.size):
        h = rel_step * max(abs(theta[i]), 1.0)
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        jac[:, i] = (fun(tp) - fun(tm)) / (2.0 * h)
    return f0, jac


def _numeric_hessian(fun, theta, rel_step=1e-4):
    n = theta.size
    hess = np.empty((n, n))
    steps = rel_step * np.maximum(np.abs(theta), 1.0)
    f0 = fun(theta)
    for i in range(n):
        for j in range(i, n):
            if i == j:
                tp, tm = theta.copy(), theta.copy()
                tp[i] += steps[i]
                tm[i] -= steps[i]
                hess[i, i] = (fun(tp) - 2 * f0 + fun(tm)) / steps[i] ** 2
            else:
                vals = []
                for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                    t = theta.copy()
                    t[i] += si * steps[i]
                    t[j] += sj * steps[j]
                    vals.append(fun(t))
                hess[i, j] = hess[j, i] = (vals[0] - vals[1] - vals[2] + vals[3]) / (4 * steps[i] * steps[j])
    return hess


def fit_curve(model: Callable, x, y, p0: Sequence[float], names: Sequence[str], *,
              transforms: Optional[Sequence] = None, family: str = "gaussian",
              sigma=None, shape: Optional[float] = None, max_iter: int = 200,
              ftol: float = 1e-12, xtol: float = 1e-10, model_id: str = "",
              fallback: bool = True) -> FitResult:
    """Maximum-likelihood fit of ``y ~ model(x, params)``.

    ``model(x, params)`` receives parameters in natural units and returns
    the expected value of ``y``. A Levenberg-Marquardt iteration on the
    Fisher-scoring normal equations is run first; if it fails to converge a
    Nelder-Mead search restarts from the best point and LM polishes again.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    names = tuple(names)
    transforms = tuple(transforms) if transforms is not None else (IDENTITY,) * len(p0)
    if len(transforms) != len(p0) or len(names) != len(p0):
        raise ValueError("p0, names and transforms must have equal length")
    lik = _Likelihood(model, x, y, family, sigma, shape)

    def natural(theta):
        return np.array([t.inverse(v) for t, v in zip(transforms, theta)])

    def predict(theta):
        with np.errstate(over="ignore", invalid="ignore"):
            return np.asarray(model(x, natural(theta)), dtype=float)

    def nll(theta):
        try:
            f = predict(theta)
        except (OverflowError, ValueError, ZeroDivisionError):
            return math.inf
        if not np.all(np.isfinite(f)):
            return math.inf
        return lik.nll(f)

    theta = np.array([t.forward(p) for t, p in zip(transforms, p0)], dtype=float)
    theta, converged, iterations, message = _levenberg_marquardt(lik, predict, nll, theta, max_iter, ftol, xtol)
    method = "levenberg-marquardt"
    if not converged and fallback and math.isfinite(nll(theta)):
        res = minimize(nll, theta, method="Nelder-Mead",
                       options={"maxiter": 4000 * theta.size, "xatol": 1e-10, "fatol": 1e-12})
        theta, converged, more, message = _levenberg_marquardt(lik, predict, nll, res.x, max_iter, ftol, xtol)
        iterations += res.nit + more
        method = "nelder-mead+levenberg-marquardt"
        if not converged:
            message = "no convergence after Nelder-Mead fallback: " + message

    f = predict(theta)
    _, jac = _numeric_jacobian(predict, theta)
    _, info = lik.score_info(f, jac)
    hess = _numeric_hessian(nll, theta)
    cov_theta = _safe_inverse(hess)
    if cov_theta is None:
        cov_theta = _safe_inverse(info)
    estimated_scale = (family == "gaussian" and sigma is None) or (family in ("gamma", "wls") and shape is None)
    if cov_theta is not None and estimated_scale:
        cov_theta = cov_theta * lik.dispersion(f, theta.size)
    d = np.array([t.derivative(v) for t, v in zip(transforms, theta)])
    if cov_theta is None:
        cov = np.full((theta.size, theta.size), np.nan)
    else:
        cov = cov_theta * np.outer(d, d)
    stderr = np.sqrt(np.clip(np.diag(cov), 0, None))
    if converged and not np.all(np.isfinite(stderr)):
        message = (message + "; " if message else "") + "standard errors undefined"
    cond = float(np.linalg.cond(info)) if np.all(np.isfinite(info)) else math.inf
    dof = max(y.size - theta.size, 1)
    return FitResult(
        names=names,
        estimates=natural(theta),
        stderr=stderr,
        objective=lik.nll(f),
        converged=bool(converged),
        iterations=int(iterations),
        reduced_objective=lik.deviance(f) / dof,
        covariance=cov,
        condition=cond,
        model=model_id,
        method=method,
        message=message,
    )


def _safe_inverse(matrix):
    if not np.all(np.isfinite(matrix)):
        return None
    try:
        inv = np.linalg.inv(matrix)
    except np.linalg.LinAlgError:
        return None
    if np.any(np.diag(inv) < 0):
        return None
    return inv


def _levenberg_marquardt(lik, predict, nll, theta, max_iter, ftol, xtol):
    lam = 1e-3
    current = nll(theta)
    if not math.isfinite(current):
        return theta, False, 0, "initial point has non-finite objective"
    for it in range(1, max_iter + 1):
        f, jac = _numeric_jacobian(predict, theta)
        grad, info = lik.score_info(f, jac)
        diag = np.diag(info).copy()
        diag[diag <= 0] = 1.0
        improved = False
        while lam < 1e12:
            try:
                step = np.linalg.solve(info + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            trial = theta + step
            value = nll(trial)
            if value < current:
                improved = True
                break
            lam *= 10
        if not improved:
            # no descent direction left: at a (numerically) stationary point
            return theta, True, it, "converged: no further decrease"
        decrease = current - value
        theta, current = trial, value
        lam = max(lam / 10, 1e-12)
        if decrease <= ftol * (abs(current) + ftol) and np.max(np.abs(step)) <= math.sqrt(xtol) * (1 + np.max(np.abs(theta))):
            return theta, True, it, "converged"
        if np.max(np.abs(step)) <= xtol * (1 + np.max(np.abs(theta))):
            return theta, True, it, "converged: step below tolerance"
    return theta, False, max_iter, "iteration cap reached"


def check_conditioning(result: FitResult, limit: float = 1e12) -> None:
    if not result.condition < limit:
        warnings.warn(
            f"fit is ill-conditioned (information condition number {result.condition:.3g}); "
            "parameters may not be separately identifiable from this dataset",
            IllConditionedWarning,
            stacklevel=3,
        )
