"""Total empirical log-likelihood, empirical Kullback divergence and related diagnostics.

Every time integral ``int_0^tau g(t) Y_i(t) dt`` is computed on a partition of
``[0, tau]`` into cells on which the integrand is treated as constant. With a
piecewise-constant time dictionary (and a piecewise-constant true baseline)
the cells are the union of all breakpoints and the integrals are exact;
otherwise a uniform midpoint grid is used.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .core import Coefficients, Cohort, DictionaryPair, TrueIntensity
from .weights import phi

__all__ = [
    "QuadratureRule",
    "SandwichConstants",
    "IntensityOverflowError",
    "CompiledProblem",
    "compile_problem",
    "neg_log_likelihood",
    "grad_neg_log_likelihood",
    "empirical_kullback",
    "weighted_empirical_norm",
    "log_ratio_norms",
    "martingale_statistics",
    "sandwich_check",
    "sandwich_constants",
    "XI",
    "XI_PRIME",
    "OVERFLOW_LIMIT",
]

OVERFLOW_LIMIT = 500.0
SUP_GRID_POINTS = 4096


def _phi_sandwich(t: float) -> float:
    """``e^{-t} + t - 1``."""
    return float(phi(-t))


XI = _phi_sandwich(2.0) / 4.0
XI_PRIME = _phi_sandwich(-2.0) / 4.0


class IntensityOverflowError(ValueError):
    """Raised when a log-intensity exceeds the overflow guard."""


@dataclass(frozen=True)
class QuadratureRule:
    """How time integrals are evaluated.

    ``scheme="auto"`` picks the exact cell partition when the time dictionary
    is piecewise constant and the midpoint grid otherwise.
    """

    scheme: str = "auto"
    grid_points_per_unit: int = 4096

    def __post_init__(self):
        if self.scheme not in ("auto", "exact", "midpoint"):
            raise ValueError(f"unknown quadrature scheme {self.scheme!r}")
        if self.grid_points_per_unit < 64:
            raise ValueError("grid_points_per_unit must be >= 64")


@dataclass(frozen=True)
class SandwichConstants:
    """``mu' = phi(mu)/mu^2`` and ``mu'' = phi(-mu)/mu^2`` with ``phi(t) = e^{-t}+t-1``."""

    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    @property
    def mu_prime(self) -> float:
        return _sandwich_ratio(self.radius)

    @property
    def mu_double_prime(self) -> float:
        return _sandwich_ratio(-self.radius)


def _sandwich_ratio(r: float) -> float:
    if math.isinf(r):
        return 0.0 if r > 0 else math.inf
    if abs(r) < 1e-4:
        return 0.5 - r / 6.0 + r * r / 24.0
    return _phi_sandwich(r) / (r * r)


def sandwich_constants(radius: float) -> SandwichConstants:
    return SandwichConstants(radius)


def _uniform_edges(tau: float, per_unit: int) -> np.ndarray:
    cells = max(1, int(math.ceil(per_unit * tau)))
    return np.linspace(0.0, tau, cells + 1)


def _as_log_fn(fn):
    def vec(t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(np.asarray(fn(t), dtype=float), t.shape)

    return vec


class CompiledProblem:
    """A cohort and dictionaries reduced to arrays for fast evaluation of ``C_n``.

    Parameters
    ----------
    cohort, dicts
        Data and dictionaries.
    quad
        Quadrature rule.
    log_offset
        Optional known log-baseline ``t -> log alpha(t)`` added to every
        log-intensity (used with the known-baseline estimator).
    offset_breakpoints
        Breakpoints of a piecewise-constant ``log_offset``; ``None`` means the
        offset varies continuously and forces the midpoint grid.
    true_intensity
        Oracle intensity; its breakpoints are merged into the cells.
    """

    def __init__(self, cohort: Cohort, dicts: DictionaryPair, quad: QuadratureRule | None = None, *,
                 log_offset: Callable | None = None, offset_breakpoints=None,
                 true_intensity: TrueIntensity | None = None):
        quad = quad or QuadratureRule()
        self.cohort = cohort
        self.dicts = dicts
        self.quad = quad
        self.true_intensity = true_intensity
        self.n = cohort.n
        self.M = dicts.M
        self.N = dicts.N
        tau = cohort.horizon
        tdict = dicts.time
        if tdict is not None and tdict.tau + 1e-12 < cohort.max_at_risk_end:
            raise ValueError("time dictionary horizon is shorter than the at-risk windows")

        dict_pc = tdict is None or tdict.piecewise_constant
        offset_pc = log_offset is None or offset_breakpoints is not None
        truth_pc = true_intensity is None or true_intensity.piecewise_constant
        if quad.scheme == "exact" and not dict_pc:
            raise ValueError("exact quadrature needs a piecewise-constant time dictionary")
        exact = quad.scheme != "midpoint" and dict_pc and offset_pc
        self.exact = exact and truth_pc
        pieces = [np.array([0.0, tau])]
        if tdict is not None and tdict.breakpoints is not None:
            pieces.append(tdict.breakpoints)
        if offset_breakpoints is not None:
            pieces.append(np.asarray(offset_breakpoints, dtype=float))
        if true_intensity is not None and true_intensity.breakpoints is not None:
            pieces.append(true_intensity.breakpoints)
        if not (exact and truth_pc):
            pieces.append(_uniform_edges(tau, quad.grid_points_per_unit))
        edges = np.unique(np.concatenate(pieces))
        edges = edges[(edges >= 0) & (edges <= tau)]
        self.edges = edges
        self.widths = np.diff(edges)
        self.mids = 0.5 * (edges[1:] + edges[:-1])
        self.C = self.mids.size

        self.X = dicts.covariate.evaluate(cohort.covariates) if self.M else np.zeros((self.n, 0))
        self.counts = cohort.jump_counts.astype(float)
        jt = cohort.all_jump_times
        self.jump_times = jt
        self.jump_subjects = cohort.jump_subjects
        if self.N:
            self.theta_cells = tdict.evaluate(self.mids)
            self.theta_jumps = tdict.evaluate(jt) if jt.size else np.zeros((0, self.N))
        else:
            self.theta_cells = np.zeros((self.C, 0))
            self.theta_jumps = np.zeros((jt.size, 0))
        self.jump_theta_total = self.theta_jumps.sum(axis=0)
        if log_offset is not None:
            fn = _as_log_fn(log_offset)
            self.offset_cells = fn(self.mids).astype(float)
            self.offset_jump_total = float(fn(jt).sum()) if jt.size else 0.0
        else:
            self.offset_cells = np.zeros(self.C)
            self.offset_jump_total = 0.0

        end = cohort.at_risk_end
        # cell holding each subject's at-risk end and the covered part of that cell
        k = np.searchsorted(edges, end, side="right") - 1
        k = np.clip(k, 0, self.C - 1)
        self._end_cell = k
        self._end_partial = end - edges[k]
        self._end_partial = np.minimum(self._end_partial, self.widths[k])

    # ---- integrals over at-risk windows -------------------------------------------------
    def risk_integrals(self, cell_values: np.ndarray) -> np.ndarray:
        """``int_0^{end_i} v(t) dt`` for cell-constant ``v``; ``cell_values`` is ``(C,)`` or ``(C, K)``."""
        v = np.asarray(cell_values, dtype=float)
        flat = v.ndim == 1
        v2 = v[:, None] if flat else v
        cum = np.vstack([np.zeros((1, v2.shape[1])), np.cumsum(v2 * self.widths[:, None], axis=0)])
        k = self._end_cell
        out = cum[k] + v2[k] * self._end_partial[:, None]
        return out[:, 0] if flat else out

    def risk_weighted_exposure(self, subject_weights: np.ndarray) -> np.ndarray:
        """Per cell ``sum_i w_i |cell ∩ [0, end_i]|``."""
        w = np.asarray(subject_weights, dtype=float)
        k = self._end_cell
        ending = np.bincount(k, weights=w, minlength=self.C)
        partial = np.bincount(k, weights=w * self._end_partial, minlength=self.C)
        after = np.concatenate([np.cumsum(ending[::-1])[::-1][1:], [0.0]])
        return after * self.widths + partial

    @cached_property
    def exposure(self) -> np.ndarray:
        """Dense ``(n, C)`` overlap lengths of each cell with ``[0, end_i]``."""
        E = np.zeros((self.n, self.C))
        E[:, :] = self.widths
        cols = np.arange(self.C)
        E[cols[None, :] > self._end_cell[:, None]] = 0.0
        E[np.arange(self.n), self._end_cell] = self._end_partial
        return E

    @cached_property
    def total_exposure(self) -> np.ndarray:
        return self.risk_integrals(np.ones(self.C))

    # ---- objective ------------------------------------------------------------------------
    def split(self, x):
        x = np.asarray(x, dtype=float)
        if x.size != self.M + self.N:
            raise ValueError(f"coefficient vector has length {x.size}, expected {self.M + self.N}")
        return x[:self.M], x[self.M:]

    def _predictors(self, beta, gamma):
        eta = self.X @ beta if self.M else np.zeros(self.n)
        g = self.theta_cells @ gamma + self.offset_cells if self.N else self.offset_cells.copy()
        if np.any(np.abs(eta) > OVERFLOW_LIMIT) or np.any(np.abs(self.theta_cells @ gamma) > OVERFLOW_LIMIT):
            raise IntensityOverflowError(f"log-intensity magnitude exceeds {OVERFLOW_LIMIT:g}")
        return eta, g

    def value(self, x) -> float:
        beta, gamma = self.split(x)
        eta, g = self._predictors(beta, gamma)
        A = self.risk_integrals(np.exp(g))
        jumps = self.jump_theta_total @ gamma + self.offset_jump_total + self.counts @ eta
        return float(-(jumps - np.exp(eta) @ A) / self.n)

    def value_and_grad(self, x):
        beta, gamma = self.split(x)
        eta, g = self._predictors(beta, gamma)
        u = np.exp(eta)
        a = np.exp(g)
        A = self.risk_integrals(a)
        jumps = self.jump_theta_total @ gamma + self.offset_jump_total + self.counts @ eta
        val = float(-(jumps - u @ A) / self.n)
        gb = -(self.X.T @ (self.counts - u * A)) / self.n
        gg = -(self.jump_theta_total - self.theta_cells.T @ (a * self.risk_weighted_exposure(u))) / self.n
        return val, np.concatenate([gb, gg])

    def grad(self, x) -> np.ndarray:
        return self.value_and_grad(x)[1]

    def hessian(self, x) -> np.ndarray:
        beta, gamma = self.split(x)
        eta, g = self._predictors(beta, gamma)
        u = np.exp(eta)
        a = np.exp(g)
        A = self.risk_integrals(a)
        H = np.zeros((self.M + self.N, self.M + self.N))
        M = self.M
        H[:M, :M] = (self.X.T * (u * A)) @ self.X
        wc = a * self.risk_weighted_exposure(u)
        H[M:, M:] = (self.theta_cells.T * wc) @ self.theta_cells
        if M and self.N:
            per_subject = self.risk_integrals(a[:, None] * self.theta_cells)
            H[:M, M:] = (self.X.T * u) @ per_subject
            H[M:, :M] = H[:M, M:].T
        return H / self.n

    # ---- oracle quantities ----------------------------------------------------------------
    @cached_property
    def truth_cells(self) -> np.ndarray:
        """``lambda_0`` at cell midpoints, ``(n, C)``."""
        if self.true_intensity is None:
            raise ValueError("this quantity needs a true intensity")
        L0 = self.true_intensity.evaluate(self.mids, self.cohort.covariates)
        if np.any(L0 < 0):
            raise ValueError("true intensity is negative on the grid")
        return L0

    @cached_property
    def compensators(self) -> np.ndarray:
        """``Lambda_i(tau) = int lambda_0 Y_i``."""
        return (self.exposure * self.truth_cells).sum(axis=1)

    def log_intensity_cells(self, x) -> np.ndarray:
        beta, gamma = self.split(x)
        eta, g = self._predictors(beta, gamma)
        return eta[:, None] + g[None, :]


def compile_problem(cohort, dicts, quad=None, **kw) -> CompiledProblem:
    return CompiledProblem(cohort, dicts, quad, **kw)


def _vector(dicts: DictionaryPair, coeffs: Coefficients) -> np.ndarray:
    if coeffs.beta.size != dicts.M or coeffs.gamma.size != dicts.N:
        raise ValueError(f"coefficients have shape ({coeffs.beta.size}, {coeffs.gamma.size}), "
                         f"dictionaries have ({dicts.M}, {dicts.N})")
    return coeffs.as_vector()


def neg_log_likelihood(cohort: Cohort, dicts: DictionaryPair, coeffs: Coefficients,
                       quad: QuadratureRule | None = None) -> float:
    """``C_n(lambda) = -(1/n) sum_i [int log lambda dN_i - int lambda Y_i dt]``."""
    x = _vector(dicts, coeffs)
    return CompiledProblem(cohort, dicts, quad).value(x)


def grad_neg_log_likelihood(cohort: Cohort, dicts: DictionaryPair, coeffs: Coefficients,
                            quad: QuadratureRule | None = None) -> np.ndarray:
    """Gradient of ``C_n`` with respect to ``(beta, gamma)``."""
    x = _vector(dicts, coeffs)
    return CompiledProblem(cohort, dicts, quad).grad(x)


def _kullback_terms(prob: CompiledProblem, x):
    logl = prob.log_intensity_cells(x)
    L0 = prob.truth_cells
    lam = np.exp(logl)
    pos = L0 > 0
    diff = np.where(pos, logl - np.log(np.where(pos, L0, 1.0)), 0.0)
    integrand = np.where(pos, L0 * phi(diff), lam)
    return diff, integrand, pos


def _kullback(prob: CompiledProblem, x) -> float:
    _, integrand, _ = _kullback_terms(prob, x)
    return float((prob.exposure * integrand).sum() / prob.n)


def empirical_kullback(cohort: Cohort, true_intensity: TrueIntensity, dicts: DictionaryPair,
                       coeffs: Coefficients, quad: QuadratureRule | None = None) -> float:
    """Empirical Kullback divergence between ``lambda_0`` and ``lambda_{beta,gamma}``.

    ``(1/n) sum_i int [(log lambda_0 - log lambda) lambda_0 - (lambda_0 - lambda)] Y_i dt``,
    written as ``lambda_0 * (e^k - k - 1)`` with ``k = log lambda - log lambda_0`` for
    accuracy near the truth.
    """
    x = _vector(dicts, coeffs)
    prob = CompiledProblem(cohort, dicts, quad, true_intensity=true_intensity)
    return _kullback(prob, x)


def _gauss_nodes(edges):
    nodes, wts = np.polynomial.legendre.leggauss(3)
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    t = (0.5 * (hi + lo))[:, None] + half[:, None] * nodes[None, :]
    w = half[:, None] * wts[None, :]
    return t.ravel(), w.ravel()


def weighted_empirical_norm(cohort: Cohort, true_intensity: TrueIntensity, h: Callable,
                            quad: QuadratureRule | None = None) -> float:
    """``sqrt((1/n) sum_i int h(t, Z_i)^2 lambda_0(t, Z_i) Y_i(t) dt)``.

    Uses three-point Gauss-Legendre on a uniform grid refined at every at-risk end
    and baseline breakpoint.
    """
    quad = quad or QuadratureRule()
    tau = cohort.horizon
    pieces = [_uniform_edges(tau, max(64, quad.grid_points_per_unit // 16)), cohort.at_risk_end, [0.0, tau]]
    if true_intensity.breakpoints is not None:
        pieces.append(true_intensity.breakpoints)
    edges = np.unique(np.concatenate([np.asarray(p, dtype=float) for p in pieces]))
    edges = edges[(edges >= 0) & (edges <= tau)]
    total = 0.0
    for i, obs in enumerate(cohort.observations):
        sub = edges[edges <= obs.at_risk_end]
        if sub.size < 2:
            continue
        t, w = _gauss_nodes(sub)
        z = obs.covariates
        hv = np.asarray(_eval_h(h, t, z), dtype=float)
        lv = true_intensity.evaluate(t, z[None, :])[0]
        total += float(np.sum(w * hv * hv * lv))
    return math.sqrt(total / cohort.n)


def _eval_h(h, t, z):
    try:
        out = np.asarray(h(t, z), dtype=float)
        if out.shape == t.shape:
            return out
        if out.ndim == 0:
            return np.full(t.shape, float(out))
    except (TypeError, ValueError):
        pass
    return np.array([float(h(s, z)) for s in t])


def log_ratio_norms(cohort, true_intensity, dicts, coeffs, quad=None):
    """Sup and weighted norms of ``log lambda_{beta,gamma} - log lambda_0``.

    Returns ``(rho, norm_squared, kullback)``. The sup runs over every subject and
    every cell of ``[0, tau]`` (plus a 4096-point grid off the exact scheme).
    """
    x = _vector(dicts, coeffs)
    prob = CompiledProblem(cohort, dicts, quad, true_intensity=true_intensity)
    return _log_ratio_norms(prob, x)


def _log_ratio_norms(prob: CompiledProblem, x):
    diff, integrand, pos = _kullback_terms(prob, x)
    if not np.all(pos):
        rho = math.inf
    else:
        rho = float(np.abs(diff).max()) if diff.size else 0.0
        if not prob.exact:
            rho = max(rho, _grid_sup_log_ratio(prob, x))
    norm2 = float((prob.exposure * prob.truth_cells * diff * diff).sum() / prob.n)
    kl = float((prob.exposure * integrand).sum() / prob.n)
    return rho, norm2, kl


def _grid_sup_log_ratio(prob: CompiledProblem, x) -> float:
    beta, gamma = prob.split(x)
    grid = np.linspace(0.0, prob.cohort.horizon, SUP_GRID_POINTS)
    eta = prob.X @ beta if prob.M else np.zeros(prob.n)
    g = prob.dicts.time.evaluate(grid) @ gamma if prob.N else np.zeros(grid.size)
    L0 = prob.true_intensity.evaluate(grid, prob.cohort.covariates)
    if np.any(L0 <= 0):
        return math.inf
    return float(np.abs(eta[:, None] + g[None, :] - np.log(L0)).max())


def martingale_statistics(cohort: Cohort, true_intensity: TrueIntensity, dicts: DictionaryPair,
                          quad: QuadratureRule | None = None):
    """Martingale increments ``eta_j`` (covariate dictionary) and ``nu_k`` (time dictionary).

    ``eta_j = (1/n) sum_i f_j(Z_i) [N_i(tau) - Lambda_i(tau)]`` and
    ``nu_k = (1/n) sum_i [sum_{jumps s} theta_k(s) - int theta_k lambda_0 Y_i dt]``.
    """
    prob = CompiledProblem(cohort, dicts, quad, true_intensity=true_intensity)
    return _martingale_statistics(prob)


def _martingale_statistics(prob: CompiledProblem):
    weighted = prob.exposure * prob.truth_cells
    comp = weighted.sum(axis=1)
    eta = prob.X.T @ (prob.counts - comp) / prob.n
    nu = (prob.jump_theta_total - weighted.sum(axis=0) @ prob.theta_cells) / prob.n
    return eta, nu


def sandwich_check(cohort: Cohort, true_intensity: TrueIntensity, dicts: DictionaryPair,
                   coeffs: Coefficients, quad: QuadratureRule | None = None) -> dict:
    """Two-sided comparison of the Kullback divergence with the weighted norm of the log-ratio.

    Returns ``lhs = rho' * ||D||^2``, ``kl``, ``rhs = rho'' * ||D||^2`` and the radius
    ``rho = ||D||_{n,inf}``, where ``D = log lambda_{beta,gamma} - log lambda_0``.
    A zero radius yields ``lhs = kl = rhs = 0``.
    """
    rho, norm2, kl = log_ratio_norms(cohort, true_intensity, dicts, coeffs, quad)
    return _sandwich_from_norms(rho, norm2, kl)


def _sandwich_from_norms(rho, norm2, kl) -> dict:
    if rho == 0.0:
        return {"lhs": 0.0, "kl": 0.0, "rhs": 0.0, "radius_used": 0.0, "holds": True}
    lo = _sandwich_ratio(rho) * norm2
    hi = _sandwich_ratio(-rho) * norm2 if math.isfinite(rho) else math.inf
    slack = 1e-10 * max(1.0, abs(kl))
    return {"lhs": lo, "kl": kl, "rhs": hi, "radius_used": rho,
            "holds": bool(lo <= kl + slack and kl <= hi + slack)}
