"""Data-driven penalty weights from an empirical Bernstein inequality.

The weights ``omega_j`` (covariate functions) and ``delta_k`` (time functions)
replace the unobservable predictable variation of the martingale increments by
the observable jump-based variation, inflated by a small factor.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

__all__ = [
    "WeightConfig",
    "PenaltyWeights",
    "phi",
    "observable_variances",
    "variance_proxies",
    "bernstein_threshold",
    "penalty_weights",
    "bernstein_tail_constant",
    "tail_bound",
]


def phi(u):
    """``e^u - u - 1``; a Taylor series below ``|u| = 1e-4`` avoids cancellation."""
    u = np.asarray(u, dtype=float)
    small = np.abs(u) < 1e-4
    us = np.where(small, u, 0.0)
    series = us * us * (0.5 + us * (1.0 / 6.0 + us * (1.0 / 24.0 + us / 120.0)))
    with np.errstate(over="ignore"):
        direct = np.expm1(np.where(small, 0.0, u)) - np.where(small, 0.0, u)
    out = np.where(small, series, direct)
    return float(out) if out.ndim == 0 else out


def _check_nu(name, v):
    if not (0 < v < 3) or not (v > phi(v)):
        raise ValueError(f"{name}={v} must lie in (0, 3) with {name} > e^{name} - {name} - 1")


@dataclass(frozen=True)
class WeightConfig:
    """Tuning of the Bernstein weights.

    ``x`` and ``y`` are the confidence levels for the covariate and time
    dictionaries, ``epsilon``/``epsilon_time`` the slack constants and
    ``nu``/``nu_time`` the variance-proxy parameters.
    """

    x: float = math.log(20.0)
    y: float = math.log(20.0)
    epsilon: float = 0.1
    epsilon_time: float = 0.1
    nu: float = 1.0
    nu_time: float = 1.0

    def __post_init__(self):
        for name in ("x", "y", "epsilon", "epsilon_time"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive number, got {v!r}")
        _check_nu("nu", self.nu)
        _check_nu("nu_time", self.nu_time)

    @property
    def c(self) -> float:
        return 2.0 * math.sqrt(2.0 * (1.0 + self.epsilon))

    @property
    def c_time(self) -> float:
        return 2.0 * math.sqrt(2.0 * (1.0 + self.epsilon_time))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PenaltyWeights:
    omega: np.ndarray
    delta: np.ndarray
    config: WeightConfig
    variance_records: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float))
        object.__setattr__(self, "delta", np.asarray(self.delta, dtype=float))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.omega, self.delta])

    def scaled(self, factor: float) -> "PenaltyWeights":
        return PenaltyWeights(self.omega * factor, self.delta * factor, self.config, self.variance_records)

    def to_dict(self) -> dict:
        rec = {k: np.asarray(v).tolist() for k, v in self.variance_records.items()}
        return {"omega": self.omega.tolist(), "delta": self.delta.tolist(), "config": self.config.to_dict(),
                "variance_records": rec}


def _design(cohort, dicts):
    X = dicts.covariate.evaluate(cohort.covariates) if dicts.M else np.zeros((cohort.n, 0))
    jt = cohort.all_jump_times
    if dicts.N and jt.size:
        TJ = dicts.time.evaluate(jt)
    else:
        TJ = np.zeros((jt.size, dicts.N))
    return X, TJ


def observable_variances(cohort, dicts):
    """Jump-based variances ``V_j = (1/n) sum_i f_j(Z_i)^2 N_i(tau)`` and ``R_k = (1/n) sum_jumps theta_k(s)^2``."""
    X, TJ = _design(cohort, dicts)
    V = (X * X).T @ cohort.jump_counts / cohort.n
    R = (TJ * TJ).sum(axis=0) / cohort.n
    return V, R


def _inflation(nu: float, n: int) -> float:
    u = nu / n
    return u - phi(u)


def variance_proxies(V, R, sup_norms, config: WeightConfig, n: int):
    """Inflated variances ``W_j`` and ``T_k``.

    ``W_j = (nu/n)/(nu/n - Phi(nu/n)) V_j + (x/n)/(nu/n - Phi(nu/n)) ||f_j||^2``;
    ``T_k`` is the same with ``nu_time``, ``y`` and ``||theta_k||``.
    ``sup_norms`` is the pair ``(covariate norms, time norms)``.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    fnorm, tnorm = (np.asarray(s, dtype=float) for s in sup_norms)
    V = np.asarray(V, dtype=float)
    R = np.asarray(R, dtype=float)
    dv = _inflation(config.nu, n)
    dt = _inflation(config.nu_time, n)
    W = (config.nu / n) / dv * V + (config.x / n) / dv * fnorm ** 2
    T = (config.nu_time / n) / dt * R + (config.y / n) / dt * tnorm ** 2
    return W, T


def bernstein_threshold(proxy, sup_norm, level: float, n: int, epsilon: float, factor: float = 1.0):
    """``factor * sqrt(2(1+eps)) sqrt(proxy*level/n) + factor * level/(3n) * sup_norm``.

    ``factor=1`` with ``level=x`` is the single-function deviation threshold;
    ``factor=2`` with ``level=x + log M`` gives the penalty weights.
    """
    proxy = np.asarray(proxy, dtype=float)
    sup_norm = np.asarray(sup_norm, dtype=float)
    c = math.sqrt(2.0 * (1.0 + epsilon))
    return factor * (c * np.sqrt(proxy * level / n) + level / (3.0 * n) * sup_norm)


def penalty_weights(cohort, dicts, config: WeightConfig | None = None) -> "PenaltyWeights":
    """Weights ``omega_j = c sqrt(W_j (x + log M)/n) + 2(x + log M)/(3n) ||f_j||``, ``delta_k`` alike."""
    config = config or WeightConfig()
    dicts = dicts.for_cohort(cohort)
    n = cohort.n
    fnorm = np.asarray(dicts.covariate.sup_norms, dtype=float)
    tnorm = np.asarray(dicts.time.sup_norms, dtype=float) if dicts.N else np.zeros(0)
    if not (np.all(np.isfinite(fnorm)) and np.all(np.isfinite(tnorm))):
        raise ValueError("dictionary sup-norms must be finite")
    V, R = observable_variances(cohort, dicts)
    W, T = variance_proxies(V, R, (fnorm, tnorm), config, n)
    omega = bernstein_threshold(W, fnorm, config.x + math.log(max(dicts.M, 1)), n, config.epsilon, 2.0)
    delta = bernstein_threshold(T, tnorm, config.y + math.log(max(dicts.N, 1)), n, config.epsilon_time, 2.0)
    records = {"V": V, "R": R, "W": W, "T": T, "covariate_sup_norms": fnorm, "time_sup_norms": tnorm}
    return PenaltyWeights(omega, delta, config, records)


def bernstein_tail_constant(config: WeightConfig, A0: float, n: int, x: float | None = None,
                            time_part: bool = False) -> float:
    """``(2/log(1+eps)) log(2 + A0 (nu/n + Phi(nu/n)) / (x/n)) + 1``.

    With ``time_part=True`` the time-dictionary parameters ``epsilon_time``,
    ``nu_time`` and ``y`` are used.
    """
    if not A0 > 0:
        raise ValueError("A0 must be positive")
    eps = config.epsilon_time if time_part else config.epsilon
    nu = config.nu_time if time_part else config.nu
    if x is None:
        x = config.y if time_part else config.x
    u = nu / n
    return 2.0 / math.log1p(eps) * math.log(2.0 + A0 * (u + phi(u)) / (x / n)) + 1.0


def tail_bound(config: WeightConfig, A0: float, n: int, x: float | None = None, time_part: bool = False) -> float:
    """``min(1, A e^{-x})``."""
    if x is None:
        x = config.y if time_part else config.x
    return min(1.0, bernstein_tail_constant(config, A0, n, x, time_part) * math.exp(-x))
