"""Acceptance criteria, one test each, at their stated tolerances.

Each test records a PASS/FAIL line printed in the terminal summary. Run with
``pytest tests/test_acceptance.py`` or directly as a script.
"""
import json
import math
import time

import numpy as np
import pytest

from intensity_lasso.cli import main
from intensity_lasso.core import (Coefficients, Cohort, CountingObservation, DictionaryPair, StepFunction,
                                  TrueIntensity, build_covariate_dictionary, build_time_dictionary)
from intensity_lasso.experiments import (bernstein_fixture, oracle_fixture, rate_fixture, rate_sweep,
                                         verify_bernstein, verify_fast_oracle, verify_slow_oracle)
from intensity_lasso.gram_re import re_constant_bruteforce, re_eigen_lower_bound, re_probability_bound
from intensity_lasso.likelihood import CompiledProblem, empirical_kullback, sandwich_check
from intensity_lasso.solver import SolverOptions, fit
from intensity_lasso.weights import PenaltyWeights, WeightConfig

from acceptance_log import record
from oracles import HistogramProblem, central_difference, damped_newton, mp_pi_n, random_multi_jump

TAU = 2.0


def histogram_dicts(cohort, bins):
    return DictionaryPair(build_covariate_dictionary(cohort), build_time_dictionary("histogram", tau=TAU, bins=bins))


def piecewise_truth(values, beta0):
    edges = np.linspace(0.0, TAU, len(values) + 1)
    return TrueIntensity.cox(StepFunction(edges, np.asarray(values, dtype=float)), np.asarray(beta0, dtype=float))


def uniform_weights(dicts, value):
    return PenaltyWeights(np.full(dicts.M, value), np.full(dicts.N, value), WeightConfig())


def fmt(report):
    return f"rate {report.rate:.4f} vs bound {report.bound:.4g} + 3*SE {3 * report.se:.4f}"


def test_criterion_01_gradient():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(5, 51))
        p = int(rng.integers(1, 7))
        bins = int(rng.integers(1, 13 - p))
        cohort = random_multi_jump(rng, n, p, TAU)
        prob = CompiledProblem(cohort, histogram_dicts(cohort, bins))
        x = rng.uniform(-1, 1, p + bins)
        g = prob.grad(x)
        fd = central_difference(prob.value, x, h=1e-5)
        worst = max(worst, float(np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-3)))
    elapsed = time.perf_counter() - start
    ok = record(1, "gradient vs central differences", worst <= 1e-6 and elapsed < 10,
                f"worst relative error {worst:.2e} (<= 1e-6), {elapsed:.1f}s (< 10s)")
    assert ok


def test_criterion_02_divergence_identities():
    rng = np.random.default_rng(102)
    values, beta0 = [0.5, 1.0, 2.0, 1.5], [0.3, -0.2, 0.1]
    truth = piecewise_truth(values, beta0)
    cohort = random_multi_jump(rng, 40, 3, TAU)
    dicts = histogram_dicts(cohort, 4)
    star = np.concatenate([beta0, np.log(values)])
    at_truth = abs(empirical_kullback(cohort, truth, dicts, Coefficients.from_vector(star, 3)))
    perturbed = [empirical_kullback(cohort, truth, dicts, Coefficients.from_vector(star + rng.uniform(-1, 1, 7), 3))
                 for _ in range(100)]
    ok = record(2, "divergence identities", at_truth <= 1e-10 and min(perturbed) > 0,
                f"|K(l0,l0)| = {at_truth:.1e} (<= 1e-10), min over 100 perturbations {min(perturbed):.2e} (> 0)")
    assert ok


def test_criterion_03_sandwich():
    rng = np.random.default_rng(103)
    values, beta0 = [0.5, 1.0, 2.0, 1.5], [0.3, -0.2, 0.1]
    truth = piecewise_truth(values, beta0)
    cohort = random_multi_jump(rng, 40, 3, TAU)
    dicts = histogram_dicts(cohort, 4)
    star = np.concatenate([beta0, np.log(values)])
    worst, checked = -math.inf, 0
    while checked < 100:
        out = sandwich_check(cohort, truth, dicts, Coefficients.from_vector(star + rng.uniform(-0.6, 0.6, 7), 3))
        if out["radius_used"] > 2:
            continue
        checked += 1
        worst = max(worst, out["lhs"] - out["kl"], out["kl"] - out["rhs"])
    # hand case: one subject on [0, 1], lambda_0 = 1, lambda = e
    one = Cohort((CountingObservation(np.array([0.0]), np.array([]), 1.0),), 1.0)
    hand_dicts = DictionaryPair(build_covariate_dictionary(one, "custom", functions=[]),
                                build_time_dictionary("histogram", tau=1.0, bins=1))
    hand = empirical_kullback(one, TrueIntensity.constant(1.0), hand_dicts, Coefficients([], [1.0]))
    hand_err = abs(hand - (math.e - 2))
    ok = record(3, "self-concordance sandwich", worst <= 1e-10 and hand_err <= 1e-12,
                f"largest signed gap to either side {worst:.1e} (<= 1e-10) on 100 draws, hand case error {hand_err:.1e}")
    assert ok


def test_criterion_04_solver():
    start = time.perf_counter()
    worst_gap, worst_kkt = 0.0, 0.0
    for seed in range(20):
        rng = np.random.default_rng(400 + seed)
        p, bins = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        cohort = random_multi_jump(rng, 40, p, TAU)
        dicts = histogram_dicts(cohort, bins)
        oracle = HistogramProblem(cohort, bins, TAU)
        _, f_star = damped_newton(oracle.value, oracle.grad, oracle.hessian, np.zeros(p + bins))
        res = fit(cohort, dicts, uniform_weights(dicts, 1.0), SolverOptions(global_scale=0.0))
        worst_gap = max(worst_gap, abs(res.objective - f_star))
        if res.converged:
            worst_kkt = max(worst_kkt, res.kkt_residual)
        # penalized fits at a few levels
        for level in (0.01, 0.05, 0.2):
            pen = fit(cohort, dicts, uniform_weights(dicts, level))
            if pen.converged:
                worst_kkt = max(worst_kkt, pen.kkt_residual)
    rng = np.random.default_rng(499)
    cohort = random_multi_jump(rng, 60, 3, TAU)
    dicts = histogram_dicts(cohort, 3)
    g0 = CompiledProblem(cohort, dicts).grad(np.zeros(6))
    dom = fit(cohort, dicts, uniform_weights(dicts, 10 * np.abs(g0).max()))
    zero = bool(np.all(dom.coeffs.as_vector() == 0.0))
    elapsed = time.perf_counter() - start
    ok = record(4, "solver", worst_gap <= 1e-5 and worst_kkt <= 1e-7 and zero and elapsed < 60,
                f"Newton gap {worst_gap:.1e} (<= 1e-5), KKT {worst_kkt:.1e} (<= 1e-7), "
                f"dominating weights all-zero {zero}, {elapsed:.1f}s (< 60s)")
    assert ok


@pytest.mark.slow
def test_criterion_05_bernstein_coverage():
    design, spec = bernstein_fixture()
    start = time.perf_counter()
    rep = verify_bernstein(design, spec, R=2000, levels=(1.0, 2.0, 4.0))
    elapsed = time.perf_counter() - start
    subs = rep.details["subclaims"]
    assert design.n == 200 and design.p == 5 and spec.time_bins == 4
    worst = max(subs, key=lambda c: c["rate"] - c["bound"] - 3 * c["se"])
    ok = record(5, "empirical Bernstein coverage", rep.passed and elapsed < 300,
                f"{len(subs)} (function, x) pairs, worst {worst['name']} rate {worst['rate']:.4f} vs "
                f"bound {worst['bound']:.4g}; {elapsed:.0f}s (< 300s)")
    assert ok


@pytest.mark.slow
def test_criterion_06_slow_oracle():
    design, spec = oracle_fixture()
    start = time.perf_counter()
    known = verify_slow_oracle(design, spec, R=500, mode="known-baseline")
    full = verify_slow_oracle(design, spec, R=500, mode="full")
    elapsed = time.perf_counter() - start
    ok = record(6, "slow oracle inequality", known.passed and full.passed and elapsed < 600,
                f"known baseline {fmt(known)}; full {fmt(full)}; {elapsed:.0f}s (< 600s)")
    assert ok


@pytest.mark.slow
def test_criterion_07_fast_oracle_and_selection():
    design, spec = oracle_fixture()
    fast = verify_fast_oracle(design, spec, R=500, claim="fast")
    sel = verify_fast_oracle(design, spec, R=500, claim="selection")
    subs = fast.details["subclaims"] + sel.details["subclaims"]
    brackets = fast.details["bracket_ok_all"] and sel.details["bracket_ok_all"]
    parts = ", ".join(f"{c['name']} {c['rate']:.3f} vs {c['bound']:.3g}" for c in subs)
    ok = record(7, "fast oracle and selection", all(c["pass"] for c in subs) and brackets,
                f"{parts}; brackets ordered on every replicate {brackets}; pi_n {fast.details['pi_n']:.3g}")
    assert ok


def test_criterion_08_re_oracles():
    ident = re_constant_bruteforce(np.eye(6), 2, 3.0).kappa
    d = np.array([4.0, 9.0, 2.0, 5.0, 7.0])
    diag = re_constant_bruteforce(np.diag(d), 2, 3.0).kappa
    rng = np.random.default_rng(108)
    below = True
    for _ in range(30):
        dim = int(rng.integers(2, 8))
        A = rng.standard_normal((dim, int(rng.integers(1, dim + 1))))
        G = A @ A.T
        below &= re_eigen_lower_bound(G) <= re_constant_bruteforce(G, 2, 3.0, n_starts=16, iters=200).kappa + 1e-8
    rel = max(abs(re_probability_bound(k, s, a0, L, n, M, clamp=False) / float(mp_pi_n(k, s, a0, L, n, M)) - 1)
              for k, s, a0, L, n, M in [(0.5, 2, 3.0, 1.0, 100, 10), (0.3, 3, 7.0, 2.0, 10 ** 7, 50),
                                        (1.2, 1, 1.0, 0.5, 400, 8)])
    ok = record(8, "restricted-eigenvalue oracles",
                ident == 1.0 and abs(diag - math.sqrt(2.0)) <= 1e-6 and below and rel <= 1e-12,
                f"identity {ident!r}, diagonal error {abs(diag - math.sqrt(2)):.1e}, eigen bound below brute force "
                f"{bool(below)}, pi_n relative error {rel:.1e}")
    assert ok


@pytest.mark.slow
def test_criterion_09_rate():
    design, spec, opts = rate_fixture()
    start = time.perf_counter()
    out = rate_sweep(design, spec, ns=(200, 400, 800), R=100, opts=opts)
    elapsed = time.perf_counter() - start
    rows = {row["n"]: row for row in out["table"]}
    lo, hi = rows[800], rows[200]
    separated = hi["mean_kl"] - lo["mean_kl"] >= 3 * math.hypot(hi["se"], lo["se"])
    slope = out["slopes"][str(design.p)]
    ok = record(9, "rate in n", separated and -1.4 <= slope <= -0.6 and elapsed < 900,
                f"mean K at n=200 {hi['mean_kl']:.4f}, n=800 {lo['mean_kl']:.4f}; slope {slope:.3f} in [-1.4, -0.6]; "
                f"{elapsed:.0f}s (< 900s)")
    assert ok


def test_criterion_10_determinism(tmp_path):
    blobs = {}
    for cmd in (["verify-bernstein", "--replicates", "40"], ["verify-oracle", "--replicates", "10"],
                ["verify-oracle", "--replicates", "5", "--claim", "fast"]):
        key = " ".join(cmd)
        out = tmp_path / "run"
        runs = []
        for threads in ("1", "2"):
            main(cmd + ["--seed", "10", "--threads", threads, "--out", str(out)])
            doc = json.loads((out / "report.json").read_text())
            doc["config"].pop("threads")
            runs.append(json.dumps(doc, sort_keys=True, indent=2).encode())
            runs.append((out / "replicates.csv").read_bytes())
        blobs[key] = runs[0] == runs[2] and runs[1] == runs[3]
    same = []
    out = tmp_path / "again"
    for _ in range(2):
        main(["verify-bernstein", "--replicates", "40", "--seed", "3", "--out", str(out)])
        same.append((out / "report.json").read_bytes())
    ok = record(10, "determinism", all(blobs.values()) and same[0] == same[1],
                f"byte-identical reports on repeat {same[0] == same[1]}, across thread counts {all(blobs.values())}")
    assert ok


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
