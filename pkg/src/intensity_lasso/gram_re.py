"""Compensator-weighted Gram matrices and restricted-eigenvalue constants.

The restricted-eigenvalue constant of a PSD matrix ``G`` is

    kappa_0(s, a0) = min_{|J| <= s} min_{||b_Jc||_1 <= a0 ||b_J||_1} sqrt(b' G b) / ||b_J||_2.

It is bracketed: ``sqrt(lambda_min(G))`` bounds it from below and a multi-start
search over every support gives a feasible point, hence an upper bound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.optimize import minimize

from .core import Cohort, DictionaryPair, TrueIntensity
from .likelihood import CompiledProblem, QuadratureRule

__all__ = [
    "GramMatrix",
    "REResult",
    "gram",
    "extended_gram",
    "re_constant_bruteforce",
    "re_eigen_lower_bound",
    "re_bracket",
    "re_probability_bound",
    "project_l1_ball",
    "MAX_BRUTE_DIM",
    "MAX_BRUTE_S",
]

MAX_BRUTE_DIM = 20
MAX_BRUTE_S = 4
# supports whose descent result is refined by a local solve
POLISH_CANDIDATES = 8


@dataclass(frozen=True)
class GramMatrix:
    matrix: np.ndarray
    provenance: str = "true-compensator"

    def __post_init__(self):
        G = np.array(self.matrix, dtype=float)
        G = 0.5 * (G + G.T)
        G.setflags(write=False)
        object.__setattr__(self, "matrix", G)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def min_eigenvalue(self) -> float:
        if self.dimension == 0:
            return math.inf
        return float(np.linalg.eigvalsh(self.matrix)[0])


@dataclass(frozen=True)
class REResult:
    kappa: float
    s: int
    a0: float
    method: str
    support: tuple | None = None
    direction: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        out = {"kappa": self.kappa, "s": self.s, "a0": self.a0, "method": self.method}
        if self.support is not None:
            out["support"] = list(self.support)
            out["direction"] = np.asarray(self.direction).tolist()
        return out


def gram(cohort: Cohort, dicts: DictionaryPair, true_intensity: TrueIntensity | None = None,
         quad: QuadratureRule | None = None) -> GramMatrix:
    """``G_n = (1/n) X' diag(Lambda_i(tau)) X``; without a true intensity ``N_i(tau)`` replaces ``Lambda_i(tau)``."""
    X = dicts.covariate.evaluate(cohort.covariates)
    if true_intensity is None:
        weights = cohort.jump_counts.astype(float)
        prov = "plug-in-counts"
    else:
        prob = CompiledProblem(cohort, DictionaryPair(dicts.covariate, None), quad, true_intensity=true_intensity)
        weights = prob.compensators
        prov = "true-compensator"
    return GramMatrix((X.T * weights) @ X / cohort.n, prov)


def extended_gram(cohort: Cohort, dicts: DictionaryPair, true_intensity: TrueIntensity,
                  quad: QuadratureRule | None = None) -> GramMatrix:
    """Gram matrix of the joint design ``[f_j(Z_i), theta_k(t)]`` integrated against ``lambda_0 Y_i``."""
    prob = CompiledProblem(cohort, dicts, quad, true_intensity=true_intensity)
    W = prob.exposure * prob.truth_cells  # (n, C) compensator mass per cell
    comp = W.sum(axis=1)
    X, Th = prob.X, prob.theta_cells
    M, N = prob.M, prob.N
    G = np.zeros((M + N, M + N))
    G[:M, :M] = (X.T * comp) @ X
    G[M:, M:] = (Th.T * W.sum(axis=0)) @ Th
    cross = X.T @ (W @ Th)
    G[:M, M:] = cross
    G[M:, :M] = cross.T
    return GramMatrix(G / cohort.n, "true-compensator")


def re_eigen_lower_bound(G) -> float:
    """``sqrt(max(lambda_min(G), 0))``, a lower bound on every restricted-eigenvalue constant."""
    G = np.asarray(getattr(G, "matrix", G), dtype=float)
    eig = np.linalg.eigvalsh(0.5 * (G + G.T))
    # eigenvalues within rounding of zero are treated as zero
    noise = G.shape[0] * np.finfo(float).eps * max(abs(float(eig[-1])), abs(float(eig[0])))
    lam = float(eig[0])
    return math.sqrt(lam) if lam > noise else 0.0


def project_l1_ball(v: np.ndarray, radius) -> np.ndarray:
    """Euclidean projection of each row of ``v`` onto the l1-ball of the matching radius."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    radius = np.broadcast_to(np.asarray(radius, dtype=float), (v.shape[0],))
    if v.shape[1] == 0:
        return v.copy()
    a = np.abs(v)
    inside = a.sum(axis=1) <= radius
    mu = -np.sort(-a, axis=1)
    cs = np.cumsum(mu, axis=1) - radius[:, None]
    idx = np.arange(1, v.shape[1] + 1)
    cond = mu - cs / idx > 0
    rho = cond.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = np.maximum(cs[np.arange(v.shape[0]), rho] / (rho + 1), 0.0)
    out = np.sign(v) * np.maximum(a - theta[:, None], 0.0)
    out[inside] = v[inside]
    return out


def _cone_search(G, supports, a0, starts, iters, rng):
    """Projected descent on ``b' G b`` over ``||b_J||_2 = 1``, ``||b_Jc||_1 <= a0 ||b_J||_1``.

    ``supports`` is an ``(m, k)`` array of supports of equal size ``k``; returns the
    best value and direction per support.
    """
    d = G.shape[0]
    m, k = supports.shape
    comp = np.array([np.setdiff1d(np.arange(d), s) for s in supports], dtype=int).reshape(m, d - k)
    GJ = G[supports[:, :, None], supports[:, None, :]]  # (m, k, k)
    # unconstrained minimizer on the block: smallest eigenvector, zero elsewhere
    _, vecs = np.linalg.eigh(GJ)
    u0 = vecs[:, :, 0]
    U = np.concatenate([u0[:, None, :], rng.standard_normal((m, starts, k))], axis=1)
    U /= np.linalg.norm(U, axis=2, keepdims=True)
    V = np.zeros((m, starts + 1, d - k))
    if d - k:
        raw = rng.standard_normal((m, starts, d - k))
        frac = rng.uniform(0.0, 1.0, (m, starts, 1))
        l1 = np.abs(raw).sum(axis=2, keepdims=True)
        V[:, 1:, :] = raw / l1 * frac * a0 * np.abs(U[:, 1:, :]).sum(axis=2, keepdims=True)
    rows = np.arange(m)[:, None]
    step = 0.25 / max(float(np.linalg.eigvalsh(G)[-1]), 1e-12)

    def assemble(U, V):
        B = np.zeros((m, U.shape[1], d))
        B[rows, :, supports] = np.moveaxis(U, 2, 1)
        if d - k:
            B[rows, :, comp] = np.moveaxis(V, 2, 1)
        return B

    B = assemble(U, V)
    BG = B @ G
    best_val = (BG * B).sum(axis=2)
    best_B = B.copy()
    for _ in range(iters):
        grad = 2.0 * BG
        gU = np.moveaxis(grad[rows, :, supports], 1, 2)
        U = U - step * gU
        U /= np.maximum(np.linalg.norm(U, axis=2, keepdims=True), 1e-300)
        if d - k:
            gV = np.moveaxis(grad[rows, :, comp], 1, 2)
            V = V - step * gV
            r = a0 * np.abs(U).sum(axis=2)
            flat = V.reshape(-1, d - k)
            out = np.abs(flat).sum(axis=1) > r.ravel()
            if np.any(out):
                flat[out] = project_l1_ball(flat[out], r.ravel()[out])
            V = flat.reshape(V.shape)
        B = assemble(U, V)
        BG = B @ G
        val = (BG * B).sum(axis=2)
        better = val < best_val
        best_val = np.where(better, val, best_val)
        best_B[better] = B[better]
    j = np.argmin(best_val, axis=1)
    return best_val[np.arange(m), j], best_B[np.arange(m), j]


def _polish(G, J, b, a0):
    """Refine a feasible direction with the signs of ``b`` held fixed.

    With fixed signs the cone is polyhedral and the quotient is smooth, so a
    local SQP solve converges tightly. Returns the better of the input and the
    refined point.
    """
    d = G.shape[0]
    J = np.asarray(J, dtype=int)
    comp = np.setdiff1d(np.arange(d), J)
    sign = np.where(b[J] >= 0, 1.0, -1.0)
    scale = np.linalg.norm(b[J])
    b = b / scale
    # variables: |b_J| (k), positive and negative parts of b_Jc
    k, r = J.size, comp.size

    def unpack(z):
        out = np.zeros(d)
        out[J] = sign * z[:k]
        out[comp] = z[k:k + r] - z[k + r:]
        return out

    def quotient(z):
        v = unpack(z)
        return float(v @ G @ v) / float(z[:k] @ z[:k])

    z0 = np.concatenate([np.abs(b[J]), np.maximum(b[comp], 0), np.maximum(-b[comp], 0)])
    cons = [{"type": "ineq", "fun": lambda z: a0 * z[:k].sum() - z[k:].sum(),
             "jac": lambda z: np.concatenate([np.full(k, a0), -np.ones(2 * r)])},
            {"type": "ineq", "fun": lambda z: z[:k] @ z[:k] - 1e-6}]
    try:
        res = minimize(quotient, z0, method="SLSQP", bounds=[(0, None)] * (k + 2 * r), constraints=cons,
                       options={"maxiter": 500, "ftol": 1e-15})
    except (ValueError, np.linalg.LinAlgError):
        return float(b @ G @ b), b
    cand = unpack(res.x)
    cand /= max(np.linalg.norm(cand[J]), 1e-300)
    feasible = np.abs(cand[comp]).sum() <= a0 * np.abs(cand[J]).sum() * (1 + 1e-12)
    base = float(b @ G @ b)
    val = float(cand @ G @ cand)
    if feasible and np.all(np.isfinite(cand)) and val < base:
        return val, cand
    return base, b


def re_constant_bruteforce(G, s: int, a0: float, n_starts: int = 64, iters: int = 300,
                           seed: int = 0) -> REResult:
    """Search every support ``|J| <= s`` for the restricted-eigenvalue constant.

    Each support is searched from the block eigen-minimizer plus ``n_starts``
    random feasible points. The result is the smallest quotient found, an upper
    bound on the exact constant; ``support`` and ``direction`` certify it.
    """
    G = np.asarray(getattr(G, "matrix", G), dtype=float)
    G = 0.5 * (G + G.T)
    d = G.shape[0]
    if d > MAX_BRUTE_DIM or s > MAX_BRUTE_S:
        raise ValueError(f"support enumeration limited to dimension <= {MAX_BRUTE_DIM} and s <= {MAX_BRUTE_S}; "
                         "use re_eigen_lower_bound for larger problems")
    if s < 1 or a0 <= 0:
        raise ValueError("need s >= 1 and a0 > 0")
    rng = np.random.default_rng(seed)
    found = []
    for k in range(1, min(s, d) + 1):
        sup = np.array(list(combinations(range(d), k)), dtype=int)
        for lo in range(0, sup.shape[0], 2048):
            chunk = sup[lo:lo + 2048]
            vals, dirs = _cone_search(G, chunk, a0, n_starts, iters, rng)
            for i in np.argsort(vals)[:POLISH_CANDIDATES]:
                found.append((float(vals[i]), tuple(int(j) for j in chunk[i]), dirs[i]))
    found.sort(key=lambda item: item[0])
    best, best_b, best_J = math.inf, None, None
    for _, J, b in found[:POLISH_CANDIDATES]:
        val, b = _polish(G, J, b, a0)
        if val < best:
            best, best_b, best_J = val, b, J
    kappa = math.sqrt(max(best, 0.0))
    return REResult(kappa, s, float(a0), "brute-force", best_J, best_b)


def re_bracket(G, s: int, a0: float, n_starts: int = 64, iters: int = 300, seed: int = 0) -> dict:
    """Lower and upper bounds on the restricted-eigenvalue constant."""
    lower = re_eigen_lower_bound(G)
    upper = re_constant_bruteforce(G, s, a0, n_starts, iters, seed)
    return {"lower": lower, "upper": upper.kappa, "certificate": upper.to_dict()}


def re_probability_bound(kappa: float, s: int, a0: float, L: float, n: int, M: int, clamp: bool = True) -> float:
    """``2 M^2 exp(-n k^4 / (2 L^2 (1+a0)^2 s (L^2 (1+a0)^2 s + k^2/3)))``, clamped to ``[0, 1]`` by default."""
    if not (kappa > 0 and s > 0 and a0 > 0 and L > 0 and n > 0 and M > 0):
        raise ValueError("all arguments must be positive")
    q = L * L * (1.0 + a0) ** 2 * s
    expo = -n * kappa ** 4 / (2.0 * q * (q + kappa * kappa / 3.0))
    log_val = math.log(2.0 * M * M) + expo
    if clamp and log_val >= 0:
        return 1.0
    return math.exp(log_val)
