import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intensity_lasso.core import (Coefficients, Cohort, CohortFormatError, CountingObservation, DictionaryPair,
                                  StepFunction, TrueIntensity, build_covariate_dictionary, build_time_dictionary,
                                  linear_predictor, log_intensity, read_cohort_csv, write_cohort_csv)

from oracles import random_right_censored


def cohort_with(Z, tau=2.0):
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    return Cohort.from_arrays(np.full(Z.shape[0], 1.0), np.zeros(Z.shape[0]), Z, tau)


# ---- data model ---------------------------------------------------------------------------

def test_observation_rejects_unsorted_jumps():
    with pytest.raises(ValueError):
        CountingObservation([0.0], [0.5, 0.2], 1.0)


def test_observation_rejects_jump_after_risk_end():
    with pytest.raises(ValueError):
        CountingObservation([0.0], [1.5], 1.0)


def test_right_censored_observation_has_at_most_one_jump():
    assert CountingObservation.right_censored([1.0], 0.7, 1).jump_times.tolist() == [0.7]
    assert CountingObservation.right_censored([1.0], 0.7, 0).n_jumps == 0
    with pytest.raises(ValueError):
        CountingObservation.right_censored([1.0], 0.7, 2)


def test_cohort_invariants():
    with pytest.raises(ValueError):
        Cohort((), 1.0)
    with pytest.raises(ValueError):
        Cohort((CountingObservation([0.0], [], 2.0),), 1.0)
    with pytest.raises(ValueError):
        Cohort((CountingObservation([0.0], [], 1.0),), 0.0)


def test_cohort_arrays():
    c = Cohort.from_arrays([1.0, 0.5, 2.0], [1, 0, 1], [[1.0], [2.0], [3.0]], 2.0)
    assert c.n == 3
    assert c.jump_counts.tolist() == [1, 0, 1]
    assert c.all_jump_times.tolist() == [1.0, 2.0]
    assert c.jump_subjects.tolist() == [0, 2]
    assert c.max_at_risk_end == 2.0


def test_step_function_integral():
    f = StepFunction(np.array([0.0, 1.0, 3.0]), np.array([2.0, 0.5]))
    assert f(np.array([0.5, 1.0, 2.9])).tolist() == [2.0, 0.5, 0.5]
    assert f.integral(np.array([0.5, 2.0, 3.0])).tolist() == [1.0, 2.5, 3.0]


# ---- linear predictor and log intensity ---------------------------------------------------

def test_linear_predictor_zero_coefficients():
    d = build_covariate_dictionary(cohort_with([[1.0, 2.0], [3.0, 4.0]]))
    assert linear_predictor(d, [0.0, 0.0], [7.0, -3.0]) == 0.0


def test_linear_predictor_coordinate():
    d = build_covariate_dictionary(cohort_with([[3.5, 1.0, 0.0], [1.0, 2.0, 1.0]]))
    assert linear_predictor(d, [1.0, 0.0, 0.0], [3.5, 9.0, 9.0]) == 3.5


def test_linear_predictor_hand_arithmetic():
    d = build_covariate_dictionary(cohort_with([[2.0, 4.0], [1.0, 1.0]]))
    assert linear_predictor(d, [0.5, -0.25], [2.0, 4.0]) == 0.0


def test_linear_predictor_dimension_mismatch():
    d = build_covariate_dictionary(cohort_with([[2.0, 4.0], [1.0, 1.0]]))
    with pytest.raises(ValueError):
        linear_predictor(d, [1.0], [2.0, 4.0])


def test_log_intensity_zero_coefficients():
    cov = build_covariate_dictionary(cohort_with([[1.0], [2.0]]))
    dicts = DictionaryPair(cov, build_time_dictionary("histogram", tau=2.0, bins=2))
    assert log_intensity(dicts, Coefficients.zeros(1, 2), 0.3, [5.0]) == 0.0


def test_log_intensity_constant_basis():
    cov = build_covariate_dictionary(cohort_with([[1.0], [2.0]]))
    dicts = DictionaryPair(cov, build_time_dictionary("histogram", tau=2.0, bins=1))
    for t in (0.0, 0.7, 2.0):
        assert log_intensity(dicts, Coefficients([0.0], [1.7]), t, [3.0]) == 1.7


def test_log_intensity_histogram_by_hand():
    cov = build_covariate_dictionary(cohort_with([[1.0], [2.0]]))
    dicts = DictionaryPair(cov, build_time_dictionary("histogram", tau=2.0, bins=2))
    coeffs = Coefficients([0.0], [math.log(2.0), math.log(3.0)])
    assert log_intensity(dicts, coeffs, 1.5, [1.0]) == pytest.approx(math.log(3.0), abs=1e-15)


def test_log_intensity_outside_horizon():
    cov = build_covariate_dictionary(cohort_with([[1.0], [2.0]]))
    dicts = DictionaryPair(cov, build_time_dictionary("histogram", tau=2.0, bins=2))
    with pytest.raises(ValueError):
        log_intensity(dicts, Coefficients.zeros(1, 2), 2.5, [1.0])
    with pytest.raises(ValueError):
        log_intensity(dicts, Coefficients.zeros(1, 2), -0.1, [1.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.lists(st.floats(-3, 3), min_size=4, max_size=4),
       st.floats(0, 2), st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_log_intensity_splits_into_time_and_covariate_parts(beta, gamma, t, z):
    cov = build_covariate_dictionary(cohort_with([[1.0, 2.0, 3.0], [0.0, -1.0, 2.0]]))
    tdict = build_time_dictionary("histogram", tau=2.0, bins=4)
    dicts = DictionaryPair(cov, tdict)
    expected = float(tdict.evaluate([t])[0] @ np.array(gamma)) + linear_predictor(cov, beta, z)
    assert log_intensity(dicts, Coefficients(beta, gamma), t, z) == pytest.approx(expected, abs=1e-12)


# ---- time dictionary ----------------------------------------------------------------------

def test_single_bin_histogram():
    d = build_time_dictionary("histogram", tau=1.0, bins=1)
    assert d.size == 1
    assert d.evaluate([0.0, 0.5, 1.0]).ravel().tolist() == [1.0, 1.0, 1.0]
    assert d.sup_norms.tolist() == [1.0]
    assert d.piecewise_constant


def test_four_bin_histogram_partition():
    d = build_time_dictionary("histogram", tau=2.0, bins=4)
    vals = d.evaluate([0.0, 0.49, 0.5, 1.0, 1.5, 2.0])
    assert vals.argmax(axis=1).tolist() == [0, 0, 1, 2, 3, 3]
    assert d.breakpoints.tolist() == [0.0, 0.5, 1.0, 1.5, 2.0]


def test_custom_identity_sup_norm_is_tau():
    d = build_time_dictionary("custom", tau=2.5, functions=[lambda t: t])
    assert d.sup_norms[0] == pytest.approx(2.5, abs=1e-12)
    assert not d.piecewise_constant


def test_time_dictionary_rejects_bad_horizon():
    with pytest.raises(ValueError):
        build_time_dictionary("histogram", tau=0.0, bins=2)
    with pytest.raises(ValueError):
        build_time_dictionary("histogram", tau=1.0, bins=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.floats(0.1, 10.0))
def test_histogram_is_partition_of_unity(bins, tau):
    d = build_time_dictionary("histogram", tau=tau, bins=bins)
    t = np.concatenate([np.linspace(0.0, tau, 1001), d.breakpoints])
    np.testing.assert_array_equal(d.evaluate(t).sum(axis=1), np.ones(t.size))


@pytest.mark.parametrize("fn", [lambda t: t, lambda t: t * t - 1.0, lambda t: np.exp(-t), lambda t: np.abs(t - 1.0),
                                lambda t: np.cos(np.pi * t)])
def test_time_sup_norm_matches_dense_grid(fn):
    tau = 2.0
    d = build_time_dictionary("custom", tau=tau, functions=[fn])
    grid = np.linspace(0.0, tau, 10001)
    assert d.sup_norms[0] == pytest.approx(np.abs(fn(grid)).max(), abs=1e-12)


def test_piecewise_constant_custom_sup_norm_is_exact():
    d = build_time_dictionary("custom", tau=3.0, functions=[lambda t: np.where(t < 1.0, -4.0, 2.0)],
                              piecewise_constant=True, breakpoints=[1.0])
    assert d.sup_norms[0] == 4.0


# ---- covariate dictionary -----------------------------------------------------------------

def test_coordinate_dictionary():
    d = build_covariate_dictionary(cohort_with([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
    assert d.size == 3
    assert d.functions[1](np.array([7.0, 8.0, 9.0])) == 8.0


def test_coordinate_sup_norm_over_cohort():
    d = build_covariate_dictionary(cohort_with([[1.0], [-4.0]]))
    assert d.sup_norms.tolist() == [4.0]


def test_custom_covariate_sup_norm():
    d = build_covariate_dictionary(cohort_with([[1.0, 2.0], [3.0, -1.0]]), "custom",
                                   functions=[lambda z: z[0] * z[1]])
    assert d.sup_norms.tolist() == [3.0]


def test_covariate_dictionary_errors():
    with pytest.raises(ValueError):
        build_covariate_dictionary(None)
    with pytest.raises(ValueError):
        build_covariate_dictionary(cohort_with([[1.0], [2.0]]), "custom", functions=[lambda z: np.inf])
    with pytest.raises(ValueError):
        CountingObservation([np.nan], [], 1.0)


def test_constant_covariate_function_warns():
    with pytest.warns(UserWarning):
        build_covariate_dictionary(cohort_with([[1.0], [2.0]]), "custom", functions=[lambda z: 1.0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_covariate_sup_norms_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    cohort = random_right_censored(rng, 15, 3)
    fns = [lambda z: z[0] * z[1], lambda z: np.sin(3 * z[2]), lambda z: z[0] - 2 * z[1]]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        d = build_covariate_dictionary(cohort, "custom", functions=fns)
    brute = [max(abs(f(z)) for z in cohort.covariates) for f in fns]
    np.testing.assert_allclose(d.sup_norms, brute, rtol=0, atol=1e-12)


# ---- true intensity -----------------------------------------------------------------------

def test_true_intensity_cox_and_bound():
    cohort = cohort_with([[0.0], [math.log(2.0)]])
    truth = TrueIntensity.cox(1.5, np.array([1.0]))
    vals = truth.evaluate(np.array([0.1, 1.0]), cohort.covariates)
    np.testing.assert_allclose(vals, [[1.5, 1.5], [3.0, 3.0]])
    assert truth.bound_A0(cohort) == pytest.approx(3.0 * 2.0)


def test_true_intensity_custom_cumulative():
    truth = TrueIntensity(func=lambda t, z: 2.0 * t)
    assert truth.cumulative(np.array([1.0]), np.zeros((1, 1)))[0] == pytest.approx(1.0, rel=1e-7)


# ---- CSV ----------------------------------------------------------------------------------

def test_csv_round_trip(tmp_path):
    cohort = random_right_censored(np.random.default_rng(0), 10, 3)
    path = tmp_path / "c.csv"
    write_cohort_csv(cohort, path)
    back = read_cohort_csv(path, tau=2.0)
    np.testing.assert_array_equal(back.covariates, cohort.covariates)
    np.testing.assert_array_equal(back.at_risk_end, cohort.at_risk_end)
    np.testing.assert_array_equal(back.jump_counts, cohort.jump_counts)


def test_csv_horizon_defaults_to_max_time(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("time,status,z1\n1.0,1,0.5\n3.0,0,0.1\n")
    assert read_cohort_csv(path).horizon == 3.0


@pytest.mark.parametrize("body,row", [("1.0,1,0.5\n2.0,x,0.1\n", 3), ("1.0,1\n", 2), ("1.0,1,0.5\n-1.0,0,0.1\n", 3),
                                      ("1.0,1,0.5\n1.0,1,0.5\n1.0,3,0.5\n", 4)])
def test_csv_error_names_row(tmp_path, body, row):
    path = tmp_path / "c.csv"
    path.write_text("time,status,z1\n" + body)
    with pytest.raises(CohortFormatError, match=f"row {row}"):
        read_cohort_csv(path)


def test_csv_bad_header(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("t,s,z1\n1.0,1,0.5\n")
    with pytest.raises(CohortFormatError):
        read_cohort_csv(path)
