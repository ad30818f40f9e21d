"""Cohorts of counting-process observations, dictionaries, and log-intensities.

A candidate intensity is ``lambda(t, Z) = exp(sum_k gamma_k theta_k(t) + sum_j beta_j f_j(Z))``
where the ``f_j`` form the covariate dictionary and the ``theta_k`` the time
dictionary.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

__all__ = [
    "CountingObservation",
    "Cohort",
    "CovariateDictionary",
    "TimeDictionary",
    "DictionaryPair",
    "Coefficients",
    "StepFunction",
    "TrueIntensity",
    "CohortFormatError",
    "linear_predictor",
    "log_intensity",
    "build_time_dictionary",
    "build_covariate_dictionary",
    "read_cohort_csv",
    "write_cohort_csv",
]

SUP_GRID_POINTS = 16385


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CountingObservation:
    """One subject: covariates, jump times of ``N_i`` and the end of its at-risk window.

    ``Y_i(t) = 1`` on ``[0, at_risk_end]`` and 0 afterwards.
    """

    covariates: np.ndarray
    jump_times: np.ndarray
    at_risk_end: float

    def __post_init__(self):
        z = _frozen(np.atleast_1d(self.covariates))
        jumps = _frozen(np.atleast_1d(self.jump_times))
        if z.ndim != 1:
            raise ValueError("covariates must be a vector")
        if not np.all(np.isfinite(z)):
            raise ValueError("covariates must be finite")
        end = float(self.at_risk_end)
        if not (math.isfinite(end) and end >= 0):
            raise ValueError(f"at_risk_end must be finite and >= 0, got {end}")
        if jumps.size:
            if np.any(np.diff(jumps) <= 0):
                raise ValueError("jump_times must be strictly increasing")
            if jumps[0] < 0 or jumps[-1] > end:
                raise ValueError("jump_times must lie in [0, at_risk_end]")
        object.__setattr__(self, "covariates", z)
        object.__setattr__(self, "jump_times", jumps)
        object.__setattr__(self, "at_risk_end", end)

    @classmethod
    def right_censored(cls, covariates, time: float, status: int) -> "CountingObservation":
        """Observation ``(X_i, delta_i, Z_i)``; the process jumps at ``X_i`` iff ``delta_i = 1``."""
        if status not in (0, 1):
            raise ValueError(f"status must be 0 or 1, got {status!r}")
        jumps = [time] if status == 1 else []
        return cls(np.asarray(covariates, dtype=float), np.asarray(jumps, dtype=float), time)

    @property
    def n_jumps(self) -> int:
        return int(self.jump_times.size)


@dataclass(frozen=True)
class Cohort:
    observations: tuple
    horizon: float

    def __post_init__(self):
        obs = tuple(self.observations)
        if len(obs) < 1:
            raise ValueError("a cohort needs at least one observation")
        tau = float(self.horizon)
        if not (tau > 0 and math.isfinite(tau)):
            raise ValueError(f"horizon must be positive, got {tau}")
        p = obs[0].covariates.size
        for i, o in enumerate(obs):
            if o.covariates.size != p:
                raise ValueError(f"subject {i} has {o.covariates.size} covariates, expected {p}")
            if o.at_risk_end > tau:
                raise ValueError(f"subject {i} is at risk beyond the horizon {tau}")
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "horizon", tau)

    def __len__(self) -> int:
        return len(self.observations)

    @property
    def n(self) -> int:
        return len(self.observations)

    @cached_property
    def covariates(self) -> np.ndarray:
        return _frozen(np.vstack([o.covariates for o in self.observations]))

    @cached_property
    def at_risk_end(self) -> np.ndarray:
        return _frozen([o.at_risk_end for o in self.observations])

    @cached_property
    def jump_counts(self) -> np.ndarray:
        return _frozen([o.n_jumps for o in self.observations])

    @cached_property
    def jump_subjects(self) -> np.ndarray:
        """Subject index of every jump, aligned with :attr:`all_jump_times`."""
        idx = np.repeat(np.arange(self.n), self.jump_counts.astype(int))
        idx.setflags(write=False)
        return idx

    @cached_property
    def all_jump_times(self) -> np.ndarray:
        if not self.jump_counts.sum():
            return _frozen(np.empty(0))
        return _frozen(np.concatenate([o.jump_times for o in self.observations]))

    @property
    def max_at_risk_end(self) -> float:
        return float(self.at_risk_end.max())

    @classmethod
    def from_arrays(cls, time, status, covariates, horizon: float | None = None) -> "Cohort":
        """Right-censored cohort from ``(X_i, delta_i, Z_i)`` arrays."""
        time = np.asarray(time, dtype=float)
        status = np.asarray(status).astype(int)
        Z = np.atleast_2d(np.asarray(covariates, dtype=float))
        if Z.shape[0] != time.size and Z.shape[1] == time.size:
            Z = Z.T
        tau = float(time.max()) if horizon is None else float(horizon)
        obs = [CountingObservation.right_censored(Z[i], time[i], int(status[i])) for i in range(time.size)]
        return cls(tuple(obs), tau)


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function on ``[edges[0], edges[-1]]``.

    ``values[k]`` holds on ``[edges[k], edges[k+1])``; the last piece is closed.
    """

    edges: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        edges = _frozen(self.edges)
        values = _frozen(self.values)
        if edges.ndim != 1 or edges.size != values.size + 1:
            raise ValueError("need len(edges) == len(values) + 1")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("edges must be strictly increasing")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "values", values)

    @property
    def breakpoints(self) -> np.ndarray:
        return self.edges

    def index(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.edges, t, side="right") - 1
        return np.clip(k, 0, self.values.size - 1)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.values[self.index(t)]

    def integral(self, upper) -> np.ndarray:
        """``int_{edges[0]}^{upper} value(s) ds`` for each entry of ``upper``."""
        upper = np.asarray(upper, dtype=float)
        lo = self.edges[:-1]
        widths = np.clip(upper[..., None] - lo, 0.0, np.diff(self.edges))
        return widths @ self.values

    cumulative = integral


def _as_time_callable(fn: Callable) -> Callable[[np.ndarray], np.ndarray]:
    def vec(t):
        t = np.asarray(t, dtype=float)
        out = np.asarray(fn(t), dtype=float)
        if out.shape != t.shape:
            out = np.broadcast_to(out, t.shape) if out.ndim == 0 else np.vectorize(fn, otypes=[float])(t)
        return out

    return vec


def _grid_sup(fn, lo: float, hi: float) -> float:
    grid = np.linspace(lo, hi, SUP_GRID_POINTS)
    vals = np.abs(fn(grid))
    best = float(vals.max())
    k = int(vals.argmax())
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    if b > a:
        res = minimize_scalar(lambda s: -abs(float(fn(np.array([s]))[0])), bounds=(a, b), method="bounded",
                              options={"xatol": 1e-14})
        best = max(best, -float(res.fun))
    return best


@dataclass(frozen=True)
class TimeDictionary:
    """Functions ``theta_1..theta_N`` on ``[0, tau]``.

    Piecewise-constant dictionaries carry their ``breakpoints`` so integrals
    against them are exact.
    """

    functions: tuple
    sup_norms: np.ndarray
    tau: float
    piecewise_constant: bool = False
    breakpoints: np.ndarray | None = None
    kind: str = "custom"
    names: tuple = ()

    def __len__(self) -> int:
        return len(self.functions)

    @property
    def size(self) -> int:
        return len(self.functions)

    def evaluate(self, t) -> np.ndarray:
        """Matrix ``theta_k(t_l)`` of shape ``(len(t), N)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.kind == "histogram":
            k = np.clip(np.searchsorted(self.breakpoints, t, side="right") - 1, 0, self.size - 1)
            out = np.zeros((t.size, self.size))
            inside = (t >= 0) & (t <= self.tau)
            out[np.arange(t.size)[inside], k[inside]] = 1.0
            return out
        if not self.functions:
            return np.zeros((t.size, 0))
        return np.column_stack([fn(t) for fn in self.functions])


@dataclass(frozen=True)
class CovariateDictionary:
    """Functions ``f_1..f_M`` of the covariates with cohort sup-norms ``max_i |f_j(Z_i)|``."""

    functions: tuple
    sup_norms: np.ndarray
    kind: str = "custom"
    names: tuple = ()
    columns: tuple | None = None

    def __len__(self) -> int:
        return len(self.functions)

    @property
    def size(self) -> int:
        return len(self.functions)

    def evaluate(self, Z) -> np.ndarray:
        """Design matrix ``f_j(Z_i)`` of shape ``(n, M)``."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if self.kind == "coordinates":
            return np.array(Z[:, list(self.columns)], dtype=float)
        if not self.functions:
            return np.zeros((Z.shape[0], 0))
        return np.column_stack([[float(fn(z)) for z in Z] for fn in self.functions])

    def for_cohort(self, cohort: Cohort) -> "CovariateDictionary":
        """Same functions, sup-norms recomputed over ``cohort``."""
        X = self.evaluate(cohort.covariates)
        return CovariateDictionary(self.functions, _sup_columns(X, self.size), self.kind, self.names, self.columns)


def _sup_columns(X: np.ndarray, m: int) -> np.ndarray:
    if m == 0:
        return _frozen(np.empty(0))
    return _frozen(np.abs(X).max(axis=0))


@dataclass(frozen=True)
class DictionaryPair:
    covariate: CovariateDictionary
    time: TimeDictionary | None = None

    @property
    def M(self) -> int:
        return self.covariate.size

    @property
    def N(self) -> int:
        return 0 if self.time is None else self.time.size

    def for_cohort(self, cohort: Cohort) -> "DictionaryPair":
        return DictionaryPair(self.covariate.for_cohort(cohort), self.time)


@dataclass(frozen=True)
class Coefficients:
    beta: np.ndarray
    gamma: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        beta = _frozen(np.atleast_1d(np.asarray(self.beta, dtype=float)).ravel())
        gamma = _frozen(np.atleast_1d(np.asarray(self.gamma, dtype=float)).ravel())
        if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(gamma))):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)

    @classmethod
    def zeros(cls, M: int, N: int = 0) -> "Coefficients":
        return cls(np.zeros(M), np.zeros(N))

    @classmethod
    def from_vector(cls, x, M: int) -> "Coefficients":
        x = np.asarray(x, dtype=float)
        return cls(x[:M], x[M:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.beta, self.gamma])


@dataclass(frozen=True)
class TrueIntensity:
    """Oracle intensity ``lambda_0(t, Z)``, only available for simulated data.

    Multiplicative intensities ``alpha_0(t) exp(f_0(Z))`` are evaluated in
    vectorized form; ``breakpoints`` marks a baseline that is piecewise
    constant in time, which keeps every integral exact.
    """

    func: Callable | None = None
    baseline: Callable | None = None
    log_risk: Callable | None = None
    breakpoints: np.ndarray | None = None
    name: str = "custom"

    @classmethod
    def cox(cls, baseline, beta0=None, log_risk: Callable | None = None) -> "TrueIntensity":
        if isinstance(baseline, (int, float)):
            c = float(baseline)
            if c <= 0:
                raise ValueError("baseline must be positive")
            base = _ConstantBaseline(c)
            bps = np.empty(0)
        else:
            base = baseline
            bps = getattr(baseline, "breakpoints", None)
        if log_risk is None:
            if beta0 is None:
                log_risk = _ZeroRisk()
            else:
                log_risk = _LinearRisk(_frozen(beta0))
        return cls(baseline=base, log_risk=log_risk, breakpoints=None if bps is None else _frozen(bps), name="cox")

    @classmethod
    def constant(cls, c: float = 1.0) -> "TrueIntensity":
        return cls.cox(c)

    @property
    def is_multiplicative(self) -> bool:
        return self.baseline is not None

    @property
    def piecewise_constant(self) -> bool:
        return self.breakpoints is not None

    def __call__(self, t, Z) -> np.ndarray:
        return self.evaluate(np.atleast_1d(t), np.atleast_2d(Z))[0]

    def evaluate(self, times, Z) -> np.ndarray:
        """``lambda_0(t_l, Z_i)`` as an ``(n, len(times))`` matrix."""
        times = np.asarray(times, dtype=float)
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if self.is_multiplicative:
            base = np.asarray(self.baseline(times), dtype=float)
            base = np.broadcast_to(base, times.shape)
            out = np.exp(self.log_risk(Z))[:, None] * base[None, :]
        else:
            out = np.vstack([np.broadcast_to(np.asarray(self.func(times, z), dtype=float), times.shape) for z in Z])
        if np.any(out < 0) or not np.all(np.isfinite(out)):
            raise ValueError("true intensity must be finite and non-negative")
        return out

    def cumulative(self, upper, Z, quad_points: int = 4096) -> np.ndarray:
        """``int_0^{upper_i} lambda_0(s, Z_i) ds`` per subject."""
        upper = np.asarray(upper, dtype=float)
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if self.is_multiplicative and hasattr(self.baseline, "cumulative"):
            return np.asarray(self.baseline.cumulative(upper), dtype=float) * np.exp(self.log_risk(Z))
        out = np.empty(upper.size)
        for i in range(upper.size):
            edges = np.linspace(0.0, upper[i], quad_points + 1)
            mids = 0.5 * (edges[1:] + edges[:-1])
            out[i] = self.evaluate(mids, Z[i:i + 1])[0].sum() * (upper[i] / quad_points)
        return out

    def bound_A0(self, cohort: Cohort) -> float:
        """``A_0 = sup_i int_0^tau lambda_0(s, Z_i) ds`` over the cohort."""
        tau = np.full(cohort.n, cohort.horizon)
        return float(self.cumulative(tau, cohort.covariates).max())


class _ConstantBaseline:
    def __init__(self, c: float):
        self.c = float(c)
        self.breakpoints = np.empty(0)

    def __call__(self, t):
        return np.full(np.shape(t), self.c)

    def cumulative(self, t):
        return self.c * np.asarray(t, dtype=float)

    def __repr__(self):
        return f"ConstantBaseline({self.c})"


class _ZeroRisk:
    def __call__(self, Z):
        return np.zeros(np.atleast_2d(Z).shape[0])


class _LinearRisk:
    def __init__(self, beta0):
        self.beta0 = beta0

    def __call__(self, Z):
        return np.atleast_2d(Z) @ self.beta0


def linear_predictor(dictionary: CovariateDictionary, beta, Z) -> float:
    """``f_beta(Z) = sum_j beta_j f_j(Z)``."""
    beta = np.asarray(beta, dtype=float)
    if beta.size != dictionary.size:
        raise ValueError(f"beta has length {beta.size}, dictionary has {dictionary.size} functions")
    if dictionary.size == 0:
        return 0.0
    return float(dictionary.evaluate(np.atleast_2d(Z))[0] @ beta)


def log_intensity(dicts: DictionaryPair, coeffs: Coefficients, t: float, Z) -> float:
    """``log lambda_{beta,gamma}(t, Z) = sum_k gamma_k theta_k(t) + f_beta(Z)``."""
    if coeffs.gamma.size != dicts.N:
        raise ValueError(f"gamma has length {coeffs.gamma.size}, time dictionary has {dicts.N} functions")
    out = linear_predictor(dicts.covariate, coeffs.beta, Z)
    if dicts.time is not None and dicts.N:
        if not (0.0 <= t <= dicts.time.tau):
            raise ValueError(f"t={t} outside [0, {dicts.time.tau}]")
        out += float(dicts.time.evaluate([t])[0] @ coeffs.gamma)
    return out


def build_time_dictionary(kind: str = "histogram", *, tau: float, bins: int | None = None,
                          functions: Sequence[Callable] | None = None, names: Sequence[str] = (),
                          piecewise_constant: bool = False, breakpoints=None) -> TimeDictionary:
    """Histogram (equal-width indicator) or custom time dictionary on ``[0, tau]``.

    Histogram bins are closed-open, except the last which is closed at ``tau``.
    """
    if not (tau > 0):
        raise ValueError(f"tau must be positive, got {tau}")
    if kind == "histogram":
        if bins is None or int(bins) < 1:
            raise ValueError("histogram dictionary needs bins >= 1")
        bins = int(bins)
        edges = np.linspace(0.0, tau, bins + 1)
        edges[-1] = tau
        fns = tuple(_Indicator(edges[k], edges[k + 1], last=(k == bins - 1)) for k in range(bins))
        names = tuple(names) or tuple(f"bin{k + 1}" for k in range(bins))
        return TimeDictionary(fns, _frozen(np.ones(bins)), float(tau), True, _frozen(edges), "histogram", names)
    if kind != "custom":
        raise ValueError(f"unknown time dictionary kind {kind!r}")
    if not functions:
        raise ValueError("custom time dictionary needs at least one function")
    fns = tuple(_as_time_callable(f) for f in functions)
    norms = []
    for fn in fns:
        if piecewise_constant:
            # constant on each cell: the midpoints and the endpoints see every value
            bp = np.unique(np.concatenate([[0.0, tau], np.asarray(breakpoints, dtype=float)]))
            bp = bp[(bp >= 0) & (bp <= tau)]
            pts = np.concatenate([bp, 0.5 * (bp[1:] + bp[:-1])])
            norms.append(float(np.abs(fn(pts)).max()))
        else:
            norms.append(_grid_sup(fn, 0.0, float(tau)))
    norms = np.asarray(norms)
    if not np.all(np.isfinite(norms)):
        raise ValueError("time dictionary functions must be bounded on [0, tau]")
    bps = None
    if piecewise_constant:
        if breakpoints is None:
            raise ValueError("piecewise-constant custom dictionaries need breakpoints")
        bps = np.unique(np.concatenate([[0.0, tau], np.asarray(breakpoints, dtype=float)]))
        bps = _frozen(bps[(bps >= 0) & (bps <= tau)])
    names = tuple(names) or tuple(f"theta{k + 1}" for k in range(len(fns)))
    return TimeDictionary(fns, _frozen(norms), float(tau), bool(piecewise_constant), bps, "custom", names)


class _Indicator:
    def __init__(self, lo: float, hi: float, last: bool):
        self.lo, self.hi, self.last = float(lo), float(hi), last

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        upper = (t <= self.hi) if self.last else (t < self.hi)
        return ((t >= self.lo) & upper).astype(float)

    def __repr__(self):
        close = "]" if self.last else ")"
        return f"1[{self.lo:g}, {self.hi:g}{close}"


class _Coordinate:
    def __init__(self, j: int):
        self.j = j

    def __call__(self, z):
        return np.atleast_1d(z)[self.j]

    def __repr__(self):
        return f"Z[{self.j}]"


def build_covariate_dictionary(cohort: Cohort, kind: str = "coordinates", *, p: int | None = None,
                               functions: Sequence[Callable] | None = None,
                               names: Sequence[str] = ()) -> CovariateDictionary:
    """Coordinate (``f_j(Z) = Z_j``) or custom covariate dictionary, sup-norms taken over ``cohort``."""
    if cohort is None or len(cohort) == 0:
        raise ValueError("covariate dictionary needs a non-empty cohort")
    Z = cohort.covariates
    if not np.all(np.isfinite(Z)):
        raise ValueError("non-finite covariate in cohort")
    if kind == "coordinates":
        p = Z.shape[1] if p is None else int(p)
        if p > Z.shape[1]:
            raise ValueError(f"p={p} exceeds the {Z.shape[1]} covariates in the cohort")
        fns = tuple(_Coordinate(j) for j in range(p))
        names = tuple(names) or tuple(f"z{j + 1}" for j in range(p))
        d = CovariateDictionary(fns, _frozen(np.empty(0)), "coordinates", names, tuple(range(p)))
    elif kind == "custom":
        fns = tuple(functions or ())
        names = tuple(names) or tuple(f"f{j + 1}" for j in range(len(fns)))
        d = CovariateDictionary(fns, _frozen(np.empty(0)), "custom", names)
    else:
        raise ValueError(f"unknown covariate dictionary kind {kind!r}")
    X = d.evaluate(Z)
    if not np.all(np.isfinite(X)):
        raise ValueError("covariate dictionary is not finite on the cohort")
    if cohort.n >= 2 and d.size:
        const = np.all(X == X[:1], axis=0) & (X[0] != 0)
        if np.any(const):
            warnings.warn(f"functions {np.flatnonzero(const).tolist()} are constant over the cohort; "
                          "a constant belongs in the time dictionary", stacklevel=2)
    return CovariateDictionary(d.functions, _sup_columns(X, d.size), d.kind, d.names, d.columns)


class CohortFormatError(ValueError):
    pass


def read_cohort_csv(path, tau: float | None = None) -> Cohort:
    """Read ``time,status,z1,...,zp`` rows into a right-censored cohort."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CohortFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 3 or header[0] != "time" or header[1] != "status":
            raise CohortFormatError(f"{path}: header must be time,status,z1,...,zp")
        p = len(header) - 2
        times, status, Z = [], [], []
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != p + 2:
                raise CohortFormatError(f"{path}: row {row_no} has {len(row)} fields, expected {p + 2}")
            try:
                t = float(row[0])
                s = int(float(row[1]))
                z = [float(c) for c in row[2:]]
            except ValueError:
                raise CohortFormatError(f"{path}: row {row_no} has a non-numeric field") from None
            if not (math.isfinite(t) and t >= 0) or s not in (0, 1) or not all(map(math.isfinite, z)):
                raise CohortFormatError(f"{path}: row {row_no} is out of range (time >= 0, status in {{0,1}})")
            times.append(t)
            status.append(s)
            Z.append(z)
    if not times:
        raise CohortFormatError(f"{path}: no data rows")
    horizon = max(times) if tau is None else float(tau)
    if max(times) > horizon:
        raise CohortFormatError(f"{path}: observed times exceed tau={horizon}")
    return Cohort.from_arrays(times, status, np.array(Z), horizon)


def write_cohort_csv(cohort: Cohort, path) -> None:
    """Write a right-censored cohort (at most one jump per subject) as CSV."""
    p = cohort.covariates.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "status"] + [f"z{j + 1}" for j in range(p)])
        for o in cohort.observations:
            if o.n_jumps > 1:
                raise ValueError("CSV format holds right-censored data only")
            w.writerow([repr(o.at_risk_end), o.n_jumps] + [repr(float(v)) for v in o.covariates])
