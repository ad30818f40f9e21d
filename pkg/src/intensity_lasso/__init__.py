"""Weighted Lasso for the full conditional intensity of counting processes."""
from importlib.metadata import PackageNotFoundError, version as _version

from .core import (Coefficients, Cohort, CountingObservation, CovariateDictionary, DictionaryPair,
                   StepFunction, TimeDictionary, TrueIntensity, build_covariate_dictionary,
                   build_time_dictionary, linear_predictor, log_intensity, read_cohort_csv)
from .likelihood import (QuadratureRule, empirical_kullback, grad_neg_log_likelihood, martingale_statistics,
                         neg_log_likelihood, sandwich_check, weighted_empirical_norm)
from .solver import FitResult, SolverOptions, fit, fit_known_baseline, regularization_path, soft_threshold
from .weights import PenaltyWeights, WeightConfig, penalty_weights, phi

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"
