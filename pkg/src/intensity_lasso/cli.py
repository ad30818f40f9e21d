"""Command-line entry point: ``intensity-lasso <subcommand> [options]``.

Settings come from built-in defaults, then an optional JSON ``--config`` file,
then flags. Every report carries the tool version and the fully resolved
configuration, and passing a report back through ``--config`` reproduces it.

Exit codes: 0 success, 1 non-convergence or failed verification (the report is
still written), 2 invalid input.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import __version__
from .core import CohortFormatError, read_cohort_csv, write_cohort_csv
from .experiments import (DictSpec, SimDesign, bernstein_fixture, oracle_fixture, rate_sweep, resolve_threads,
                          simulate_cohort, verify_bernstein, verify_fast_oracle, verify_slow_oracle,
                          write_replicates_csv)
from .gram_re import gram, re_bracket, re_probability_bound, MAX_BRUTE_DIM, MAX_BRUTE_S, re_eigen_lower_bound
from .likelihood import (CompiledProblem, _log_ratio_norms, _martingale_statistics, _sandwich_from_norms)
from .solver import SolverOptions, fit_problem
from .weights import WeightConfig, penalty_weights

__all__ = ["RunConfig", "ConfigError", "parse_config", "run", "main"]

SUBCOMMANDS = ("fit", "weights", "diagnose", "re-check", "simulate", "verify-bernstein", "verify-oracle",
               "rate-sweep")
SIM_COMMANDS = ("simulate", "verify-bernstein", "verify-oracle", "rate-sweep")
DIR_OUTPUT = ("verify-bernstein", "verify-oracle")


class ConfigError(ValueError):
    """Invalid configuration; reported with exit code 2."""


@dataclass
class RunConfig:
    subcommand: str
    data: str | None = None
    sim: dict | None = None
    tau: float | None = None
    time_bins: int | None = None
    x: float = WeightConfig.x
    y: float = WeightConfig.y
    nu: float = 1.0
    nu_time: float = 1.0
    epsilon: float = 0.1
    epsilon_time: float = 0.1
    scale: float = 1.0
    max_iters: int = 5000
    kkt_tol: float = 1e-7
    seed: int | None = None
    threads: int = 1
    out: str | None = None
    replicates: int | None = None
    levels: list = field(default_factory=lambda: [1.0, 2.0, 4.0])
    claim: str = "slow"
    mode: str = "known-baseline"
    zeta: float = 1.0
    s: int = 2
    a0: float = 3.0
    re_starts: int | None = None
    ns: list = field(default_factory=lambda: [200, 400, 800])
    ps: list | None = None

    def weight_config(self) -> WeightConfig:
        return WeightConfig(self.x, self.y, self.epsilon, self.epsilon_time, self.nu, self.nu_time)

    def solver_options(self) -> SolverOptions:
        return SolverOptions(max_iters=self.max_iters, kkt_tol=self.kkt_tol, global_scale=self.scale)

    def to_dict(self) -> dict:
        return asdict(self)


FIELD_NAMES = [f.name for f in fields(RunConfig)]

# flag name -> (config key, type)
FLAGS = {
    "--data": ("data", str), "--tau": ("tau", float), "--time-bins": ("time_bins", int), "--x": ("x", float),
    "--y": ("y", float), "--nu": ("nu", float), "--nu-time": ("nu_time", float), "--epsilon": ("epsilon", float),
    "--epsilon-time": ("epsilon_time", float), "--scale": ("scale", float), "--max-iters": ("max_iters", int),
    "--kkt-tol": ("kkt_tol", float), "--seed": ("seed", int), "--threads": ("threads", int), "--out": ("out", str),
    "--replicates": ("replicates", int), "--claim": ("claim", str), "--mode": ("mode", str),
    "--zeta": ("zeta", float), "--s": ("s", int), "--a0": ("a0", float), "--re-starts": ("re_starts", int),
}
LIST_FLAGS = {"--levels": ("levels", float), "--ns": ("ns", int), "--ps": ("ps", int)}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="intensity-lasso", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"intensity-lasso {__version__}")
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="JSON config file or a previous report")
        sp.add_argument("--sim", default=None, help="simulation design as a JSON file")
        for flag, (key, typ) in FLAGS.items():
            sp.add_argument(flag, dest=key, type=typ, default=None)
        for flag, (key, typ) in LIST_FLAGS.items():
            sp.add_argument(flag, dest=key, type=typ, nargs="+", default=None)
    return p


def _load_json(path: str, what: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read {what} {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{what} {path} is not valid JSON: {e}") from None


def _check_types(d: dict):
    types = {f.name: f.type for f in fields(RunConfig)}
    for key, val in d.items():
        if val is None:
            continue
        t = types[key]
        if "float" in t and not isinstance(val, (int, float)):
            raise ConfigError(f"config key {key!r} must be a number")
        if t.startswith("int") and not (isinstance(val, int) and not isinstance(val, bool)):
            raise ConfigError(f"config key {key!r} must be an integer")
        if t.startswith("str") and not isinstance(val, str):
            raise ConfigError(f"config key {key!r} must be a string")
        if t.startswith("list") and not isinstance(val, list):
            raise ConfigError(f"config key {key!r} must be a list")


def _default_design(subcommand: str, seed: int):
    if subcommand == "verify-bernstein":
        return bernstein_fixture(seed)
    return oracle_fixture(seed)


def parse_config(argv) -> RunConfig:
    """Resolve defaults, the config file and flags into a :class:`RunConfig`.

    Raises :class:`ConfigError` naming the offending key on invalid input.
    """
    try:
        ns = _parser().parse_args(argv)
    except SystemExit as e:
        if e.code == 0:
            raise
        raise ConfigError("invalid command line") from None
    values: dict = {}
    if ns.config:
        raw = _load_json(ns.config, "config file")
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        if "config" in raw and "version" in raw:
            raw = raw["config"]
        raw = dict(raw)
        sub = raw.pop("subcommand", ns.subcommand)
        if sub != ns.subcommand:
            raise ConfigError(f"config key 'subcommand' is {sub!r} but the command is {ns.subcommand!r}")
        for key in raw:
            if key not in FIELD_NAMES:
                raise ConfigError(f"unknown config key {key!r}")
        _check_types(raw)
        values.update(raw)
    for key in FIELD_NAMES:
        v = getattr(ns, key, None)
        if v is not None and key not in ("subcommand", "sim"):
            values[key] = v
    if ns.sim is not None:
        sim = _load_json(ns.sim, "design file")
        if not isinstance(sim, dict):
            raise ConfigError("design file must hold a JSON object")
        values["sim"] = sim
    if "threads" not in values:
        try:
            values["threads"] = resolve_threads(None)
        except ValueError:
            raise ConfigError("INTENSITY_LASSO_THREADS must be a positive integer") from None
    cfg = RunConfig(subcommand=ns.subcommand, **values)
    return _resolve(cfg)


def _resolve(cfg: RunConfig) -> RunConfig:
    sub = cfg.subcommand
    if cfg.threads < 1:
        raise ConfigError("config key 'threads' must be >= 1")
    if cfg.data is not None and cfg.sim is not None:
        raise ConfigError("config keys 'data' and 'sim' are mutually exclusive")
    needs_seed = sub in SIM_COMMANDS or cfg.sim is not None
    if needs_seed and cfg.seed is None:
        raise ConfigError("config key 'seed' is required for simulation")
    if sub in ("fit", "weights", "diagnose", "re-check"):
        if cfg.data is None and cfg.sim is None:
            raise ConfigError("one of config keys 'data' or 'sim' is required")
        if sub == "diagnose" and cfg.sim is None:
            raise ConfigError("config key 'sim' is required: diagnostics need the true intensity")
    if cfg.sim is not None:
        try:
            design = SimDesign.from_dict(cfg.sim)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid 'sim' design: {e}") from None
        cfg.sim = replace(design, seed=cfg.seed).to_dict()
    elif sub in SIM_COMMANDS:
        design, spec = _default_design(sub, cfg.seed)
        cfg.sim = design.to_dict()
        if cfg.time_bins is None:
            cfg.time_bins = spec.time_bins
    if cfg.time_bins is None:
        cfg.time_bins = 4
    if cfg.time_bins < 0:
        raise ConfigError("config key 'time_bins' must be >= 0")
    if cfg.replicates is None:
        cfg.replicates = {"verify-bernstein": 2000, "verify-oracle": 500, "rate-sweep": 100}.get(sub)
    if cfg.replicates is not None and cfg.replicates < 1:
        raise ConfigError("config key 'replicates' must be >= 1")
    if cfg.claim not in ("slow", "fast", "selection"):
        raise ConfigError(f"config key 'claim' must be slow, fast or selection, got {cfg.claim!r}")
    if cfg.mode not in ("known-baseline", "full"):
        raise ConfigError(f"config key 'mode' must be known-baseline or full, got {cfg.mode!r}")
    if cfg.re_starts is None:
        cfg.re_starts = 64 if sub == "re-check" else 8
    try:
        cfg.weight_config()
        cfg.solver_options()
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if sub in DIR_OUTPUT + ("rate-sweep",) and cfg.out is None:
        raise ConfigError("config key 'out' is required for this subcommand")
    if sub == "simulate" and cfg.out is None:
        raise ConfigError("config key 'out' is required for simulate (cohort CSV path)")
    return cfg


# ---- output -------------------------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _report(cfg: RunConfig, result: dict) -> str:
    doc = {"tool": "intensity-lasso", "version": __version__, "config": cfg.to_dict(), "result": result}
    return json.dumps(_clean(doc), sort_keys=True, indent=2) + "\n"


def _emit(cfg: RunConfig, result: dict, path: str | None = None):
    text = _report(cfg, result)
    path = path if path is not None else cfg.out
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


# ---- subcommands --------------------------------------------------------------------------

def _cohort(cfg: RunConfig):
    if cfg.data is not None:
        return read_cohort_csv(cfg.data, cfg.tau), None, None
    design = SimDesign.from_dict(cfg.sim)
    cohort, truth = simulate_cohort(design)
    return cohort, truth, design


def _fit(cfg: RunConfig, cohort, dicts):
    w = penalty_weights(cohort, dicts, cfg.weight_config())
    prob = CompiledProblem(cohort, dicts)
    res = fit_problem(prob, w.as_vector(), cfg.solver_options())
    return w, res


def _cmd_fit(cfg: RunConfig) -> int:
    cohort, _, _ = _cohort(cfg)
    dicts = DictSpec(cfg.time_bins).build(cohort)
    w, res = _fit(cfg, cohort, dicts)
    result = res.to_dict()
    result.update({"weights": w.to_dict(), "n": cohort.n, "events": int(cohort.jump_counts.sum()),
                   "tau": cohort.horizon, "max_at_risk_end": cohort.max_at_risk_end,
                   "covariate_names": list(dicts.covariate.names),
                   "time_names": list(dicts.time.names) if dicts.N else []})
    _emit(cfg, result)
    return 0 if res.converged else 1


def _cmd_weights(cfg: RunConfig) -> int:
    cohort, _, _ = _cohort(cfg)
    dicts = DictSpec(cfg.time_bins).build(cohort)
    w = penalty_weights(cohort, dicts, cfg.weight_config())
    _emit(cfg, {"weights": w.to_dict(), "n": cohort.n, "covariate_names": list(dicts.covariate.names),
                "time_names": list(dicts.time.names) if dicts.N else []})
    return 0


def _cmd_diagnose(cfg: RunConfig) -> int:
    cohort, truth, _ = _cohort(cfg)
    dicts = DictSpec(cfg.time_bins).build(cohort)
    w, res = _fit(cfg, cohort, dicts)
    prob = CompiledProblem(cohort, dicts, true_intensity=truth)
    x = res.coeffs.as_vector()
    rho, norm2, kl = _log_ratio_norms(prob, x)
    eta, nu = _martingale_statistics(prob)
    G = gram(cohort, dicts, truth)
    result = {"fit": res.to_dict(), "kullback": kl, "log_ratio_norm_squared": norm2, "rho_hat": rho,
              "sandwich": _sandwich_from_norms(rho, norm2, kl), "eta": eta, "nu": nu,
              "gram_min_eigenvalue": G.min_eigenvalue(), "A0": truth.bound_A0(cohort),
              "max_at_risk_end": cohort.max_at_risk_end}
    _emit(cfg, result)
    return 0 if res.converged else 1


def _cmd_re_check(cfg: RunConfig) -> int:
    cohort, truth, _ = _cohort(cfg)
    dicts = DictSpec(0).build(cohort)
    G = gram(cohort, dicts, truth)
    L = float(np.abs(dicts.covariate.evaluate(cohort.covariates)).max())
    if G.dimension <= MAX_BRUTE_DIM and cfg.s <= MAX_BRUTE_S:
        br = re_bracket(G, cfg.s, cfg.a0, n_starts=cfg.re_starts, seed=cfg.seed or 0)
        bracket = [br["lower"], br["upper"]]
        cert = br["certificate"]
    else:
        lo = re_eigen_lower_bound(G)
        bracket = [lo, None]
        cert = {"method": "eigen-lower-bound"}
    pi_n = re_probability_bound(bracket[0], cfg.s, cfg.a0, max(L, 1e-300), cohort.n, dicts.M) \
        if bracket[0] > 0 else 1.0
    _emit(cfg, {"kappa_bracket": bracket, "pi_n": pi_n, "certificate": cert, "gram": G.matrix,
                "provenance": G.provenance})
    return 0


def _cmd_simulate(cfg: RunConfig) -> int:
    design = SimDesign.from_dict(cfg.sim)
    cohort, truth = simulate_cohort(design)
    write_cohort_csv(cohort, cfg.out)
    summary = {"n": cohort.n, "events": int(cohort.jump_counts.sum()), "A0": truth.bound_A0(cohort),
               "censored_fraction": float(1.0 - cohort.jump_counts.mean()), "csv": cfg.out}
    sys.stdout.write(_report(cfg, summary))
    return 0


def _write_dir(cfg: RunConfig, report) -> None:
    os.makedirs(cfg.out, exist_ok=True)
    csv_path = os.path.join(cfg.out, "replicates.csv")
    write_replicates_csv(report.rows, csv_path)
    report.artifacts_path = "replicates.csv"
    _emit(cfg, report.to_dict(), os.path.join(cfg.out, "report.json"))


def _cmd_verify_bernstein(cfg: RunConfig) -> int:
    design = SimDesign.from_dict(cfg.sim)
    rep = verify_bernstein(design, DictSpec(cfg.time_bins), cfg.weight_config(), cfg.replicates,
                           tuple(cfg.levels), cfg.threads)
    _write_dir(cfg, rep)
    return 0 if rep.passed else 1


def _cmd_verify_oracle(cfg: RunConfig) -> int:
    design = SimDesign.from_dict(cfg.sim)
    spec = DictSpec(cfg.time_bins)
    opts = replace(cfg.solver_options(), global_scale=1.0)
    if cfg.claim == "slow":
        rep = verify_slow_oracle(design, spec, cfg.weight_config(), cfg.replicates, cfg.mode, cfg.threads, opts)
    else:
        rep = verify_fast_oracle(design, spec, cfg.weight_config(), cfg.replicates, cfg.zeta, cfg.claim, cfg.mode,
                                 cfg.threads, opts, re_starts=cfg.re_starts)
    _write_dir(cfg, rep)
    return 0 if rep.passed else 1


def _cmd_rate_sweep(cfg: RunConfig) -> int:
    design = SimDesign.from_dict(cfg.sim)
    if len(cfg.ns) < 3:
        raise ConfigError("config key 'ns' needs at least 3 sample sizes")
    table = rate_sweep(design, DictSpec(cfg.time_bins), cfg.weight_config(), cfg.ns, cfg.ps, cfg.replicates,
                       cfg.threads, cfg.solver_options())
    os.makedirs(cfg.out, exist_ok=True)
    write_replicates_csv(table["table"], os.path.join(cfg.out, "table.csv"))
    _emit(cfg, table, os.path.join(cfg.out, "report.json"))
    return 0


COMMANDS = {
    "fit": _cmd_fit, "weights": _cmd_weights, "diagnose": _cmd_diagnose, "re-check": _cmd_re_check,
    "simulate": _cmd_simulate, "verify-bernstein": _cmd_verify_bernstein, "verify-oracle": _cmd_verify_oracle,
    "rate-sweep": _cmd_rate_sweep,
}


def run(cfg: RunConfig) -> int:
    """Execute a resolved configuration and return the exit code."""
    try:
        return COMMANDS[cfg.subcommand](cfg)
    except (ConfigError, CohortFormatError) as e:
        sys.stderr.write(f"error: {e}\n")
        return 2
    except (OSError, ValueError) as e:
        sys.stderr.write(f"error: {e}\n")
        return 2


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_config(argv)
    except ConfigError as e:
        sys.stderr.write(f"error: {e}\n")
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
