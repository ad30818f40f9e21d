"""Weighted-Lasso fit of the full intensity by accelerated proximal gradient.

Minimizes ``C_n(lambda_{beta,gamma}) + sum_j omega_j |beta_j| + sum_k delta_k |gamma_k|``.
FISTA with backtracking and function-value restart does the bulk of the work;
a Newton step on the active set then polishes the solution to the KKT tolerance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import Coefficients, Cohort, DictionaryPair, StepFunction
from .likelihood import CompiledProblem, IntensityOverflowError, QuadratureRule
from .weights import PenaltyWeights

__all__ = [
    "SolverOptions",
    "FitResult",
    "soft_threshold",
    "kkt_residual",
    "fit",
    "fit_problem",
    "fit_known_baseline",
    "regularization_path",
]


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 5000
    kkt_tol: float = 1e-7
    initial_step: float = 1.0
    backtrack_factor: float = 0.5
    acceleration: bool = True
    global_scale: float = 1.0
    fix_gamma: tuple | None = None
    polish: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not (self.kkt_tol > 0 and self.initial_step > 0):
            raise ValueError("tolerances and step must be positive")
        if not (0 < self.backtrack_factor < 1):
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if not (self.global_scale >= 0 and math.isfinite(self.global_scale)):
            raise ValueError("global_scale must be finite and >= 0")


@dataclass
class FitResult:
    coeffs: Coefficients
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool
    active_beta: list
    active_gamma: list
    weights: np.ndarray
    smooth_value: float = float("nan")
    message: str = ""
    history: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "beta": self.coeffs.beta.tolist(),
            "gamma": self.coeffs.gamma.tolist(),
            "objective": self.objective,
            "neg_log_likelihood": self.smooth_value,
            "kkt_residual": self.kkt_residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "active_beta": list(self.active_beta),
            "active_gamma": list(self.active_gamma),
            "penalty_weights": self.weights.tolist(),
            "message": self.message,
        }


def soft_threshold(z, t):
    """``sign(z) max(|z| - t, 0)``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("threshold must be non-negative")
    z = np.asarray(z, dtype=float)
    out = np.sign(z) * np.maximum(np.abs(z) - t, 0.0)
    return float(out) if out.ndim == 0 else out


def kkt_residual(grad, x, w) -> float:
    """Largest violation of the subgradient optimality conditions."""
    grad, x, w = (np.asarray(a, dtype=float) for a in (grad, x, w))
    if grad.size == 0:
        return 0.0
    nz = x != 0
    r = np.where(nz, np.abs(grad + w * np.sign(x)), np.maximum(np.abs(grad) - w, 0.0))
    return float(r.max())


def _penalty(x, w) -> float:
    return float(np.abs(x) @ w)


def _newton_polish(prob: CompiledProblem, x, w, tol, max_steps=50):
    """Damped Newton on the sign pattern of ``x``; keeps the result only if KKT improves."""
    best = x.copy()
    val, g = prob.value_and_grad(best)
    best_obj = val + _penalty(best, w)
    best_kkt = kkt_residual(g, best, w)
    cur = best.copy()
    cur_obj = best_obj
    for _ in range(max_steps):
        if best_kkt <= tol:
            break
        active = cur != 0
        # a zero coordinate whose gradient exceeds its weight should enter
        val, g = prob.value_and_grad(cur)
        entering = (~active) & (np.abs(g) > w)
        if np.any(entering):
            break
        if not np.any(active):
            break
        s = np.sign(cur[active])
        H = prob.hessian(cur)[np.ix_(active, active)]
        rhs = g[active] + w[active] * s
        try:
            step = np.linalg.solve(H + 1e-14 * np.eye(H.shape[0]), rhs)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        moved = False
        for _ in range(40):
            trial = cur.copy()
            trial[active] = cur[active] - t * step
            if np.all(np.sign(trial[active]) == s):
                try:
                    obj = prob.value(trial) + _penalty(trial, w)
                except IntensityOverflowError:
                    obj = math.inf
                if obj <= cur_obj + 1e-14 * max(1.0, abs(cur_obj)):
                    cur, cur_obj = trial, obj
                    moved = True
                    break
            t *= 0.5
        if not moved:
            break
        _, g = prob.value_and_grad(cur)
        k = kkt_residual(g, cur, w)
        if k < best_kkt and cur_obj <= best_obj + 1e-12 * max(1.0, abs(best_obj)):
            best, best_obj, best_kkt = cur.copy(), cur_obj, k
    return best


def fit_problem(prob: CompiledProblem, w, opts: SolverOptions | None = None, init=None) -> FitResult:
    """Proximal-gradient fit of a compiled problem with per-coordinate weights ``w``."""
    opts = opts or SolverOptions()
    w = np.asarray(w, dtype=float) * opts.global_scale
    d = prob.M + prob.N
    if w.size != d:
        raise ValueError(f"expected {d} weights, got {w.size}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    x = np.zeros(d) if init is None else np.array(init, dtype=float)
    if d == 0:
        val = prob.value(x)
        return FitResult(Coefficients.zeros(0, 0), val, 0.0, 0, True, [], [], w, val)

    val, g = prob.value_and_grad(x)
    obj = val + _penalty(x, w)
    history = [obj]
    L = 1.0 / opts.initial_step
    y, yval, yg = x.copy(), val, g
    t_acc = 1.0
    converged = False
    it = 0
    kkt = kkt_residual(g, x, w)
    message = ""
    for it in range(1, opts.max_iters + 1):
        if kkt <= opts.kkt_tol:
            converged = True
            it -= 1
            break
        # backtracking on the quadratic upper bound of the smooth part at y
        while True:
            step = 1.0 / L
            z = soft_threshold(y - step * yg, step * w)
            try:
                zval = prob.value(z)
            except IntensityOverflowError:
                zval = math.inf
            diff = z - y
            if zval <= yval + yg @ diff + 0.5 * L * (diff @ diff) + 1e-12 * max(1.0, abs(yval)):
                break
            L /= opts.backtrack_factor
            if L > 1e20:
                message = "step size underflow"
                break
        if message:
            break
        zobj = zval + _penalty(z, w)
        if zobj <= obj:
            x_new, obj_new = z, zobj
            restart = False
        else:
            x_new, obj_new = x, obj
            restart = True
        if opts.acceleration and not restart:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_acc * t_acc))
            y = x_new + ((t_acc - 1.0) / t_next) * (x_new - x)
            t_acc = t_next
        else:
            y = x_new.copy()
            t_acc = 1.0
        x, obj = x_new, obj_new
        history.append(obj)
        try:
            yval, yg = prob.value_and_grad(y)
        except IntensityOverflowError:
            y = x.copy()
            t_acc = 1.0
            yval, yg = prob.value_and_grad(y)
        # allow the step to grow again
        L *= opts.backtrack_factor ** 0.25
        val, g = prob.value_and_grad(x)
        kkt = kkt_residual(g, x, w)
        if opts.polish and it % 50 == 0 and kkt > opts.kkt_tol:
            x = _newton_polish(prob, x, w, opts.kkt_tol)
            val, g = prob.value_and_grad(x)
            obj = val + _penalty(x, w)
            kkt = kkt_residual(g, x, w)
            y, yval, yg, t_acc = x.copy(), val, g, 1.0
    else:
        it = opts.max_iters
    if not converged and opts.polish:
        x = _newton_polish(prob, x, w, opts.kkt_tol)
    val, g = prob.value_and_grad(x)
    obj = val + _penalty(x, w)
    kkt = kkt_residual(g, x, w)
    converged = kkt <= opts.kkt_tol
    if not converged and not message:
        message = f"KKT residual {kkt:.3g} above tolerance after {it} iterations"
    coeffs = Coefficients.from_vector(x, prob.M)
    return FitResult(
        coeffs=coeffs,
        objective=obj,
        kkt_residual=kkt,
        iterations=it,
        converged=converged,
        active_beta=np.flatnonzero(coeffs.beta).tolist(),
        active_gamma=np.flatnonzero(coeffs.gamma).tolist(),
        weights=w,
        smooth_value=val,
        message=message,
        history=history,
    )


def fit(cohort: Cohort, dicts: DictionaryPair, weights: PenaltyWeights, opts: SolverOptions | None = None,
        quad: QuadratureRule | None = None, init=None) -> FitResult:
    """Weighted-Lasso estimate of ``(beta, gamma)``.

    With ``opts.fix_gamma`` set, ``gamma`` is held at that value and only
    ``beta`` is fitted; the returned coefficients carry the frozen ``gamma``.
    """
    opts = opts or SolverOptions()
    w = weights.as_vector()
    if opts.fix_gamma is not None:
        gamma = np.asarray(opts.fix_gamma, dtype=float)
        if gamma.size != dicts.N:
            raise ValueError("fix_gamma has the wrong length")
        tdict = dicts.time
        prob = CompiledProblem(cohort, DictionaryPair(dicts.covariate, None), quad,
                               log_offset=lambda t: tdict.evaluate(t) @ gamma,
                               offset_breakpoints=tdict.breakpoints if tdict.piecewise_constant else None)
        res = fit_problem(prob, w[:dicts.M], opts, None if init is None else np.asarray(init)[:dicts.M])
        res.coeffs = Coefficients(res.coeffs.beta, gamma)
        res.weights = np.concatenate([res.weights, np.zeros(dicts.N)])
        return res
    prob = CompiledProblem(cohort, dicts, quad)
    return fit_problem(prob, w, opts, init)


def fit_known_baseline(cohort: Cohort, dicts: DictionaryPair, true_baseline, weights: PenaltyWeights,
                       opts: SolverOptions | None = None, quad: QuadratureRule | None = None,
                       init=None) -> FitResult:
    """Lasso for ``lambda(t, Z) = alpha_0(t) exp(f_beta(Z))`` with a known baseline.

    Only ``beta`` is fitted. A :class:`~intensity_lasso.core.StepFunction` baseline
    (or any callable with ``breakpoints``) is integrated exactly.
    """
    if isinstance(true_baseline, (int, float)):
        c = float(true_baseline)
        if c <= 0:
            raise ValueError("baseline must be positive")
        log_alpha = lambda t: np.full(np.shape(t), math.log(c))  # noqa: E731
        bps = np.empty(0)
    else:
        def log_alpha(t):
            a = np.asarray(true_baseline(t), dtype=float)
            if np.any(a <= 0):
                raise ValueError("baseline must be positive")
            return np.log(a)
        bps = getattr(true_baseline, "breakpoints", None)
    cov_only = DictionaryPair(dicts.covariate, None)
    prob = CompiledProblem(cohort, cov_only, quad, log_offset=log_alpha, offset_breakpoints=bps)
    w = np.asarray(weights.omega, dtype=float)
    return fit_problem(prob, w, opts, init)


def regularization_path(cohort: Cohort, dicts: DictionaryPair, weights: PenaltyWeights, scales,
                        opts: SolverOptions | None = None, quad: QuadratureRule | None = None) -> list:
    """Warm-started fits over a descending sequence of global scales."""
    scales = [float(s) for s in scales]
    if any(a < b for a, b in zip(scales, scales[1:])):
        raise ValueError("scales must be sorted in descending order")
    opts = opts or SolverOptions()
    prob = CompiledProblem(cohort, dicts, quad)
    out = []
    init = None
    for s in scales:
        res = fit_problem(prob, weights.as_vector(), replace(opts, global_scale=s), init)
        out.append(res)
        init = res.coeffs.as_vector()
    return out


def histogram_log_baseline(baseline: StepFunction, time_dict) -> np.ndarray:
    """Coefficients ``gamma`` with ``sum_k gamma_k theta_k = log alpha_0`` on a matching histogram."""
    mids = 0.5 * (time_dict.breakpoints[1:] + time_dict.breakpoints[:-1])
    return np.log(np.asarray(baseline(mids), dtype=float))
