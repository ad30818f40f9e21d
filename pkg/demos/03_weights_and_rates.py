"""How large the data-driven weights are, and how the error decays with n.

Run with ``python demos/03_weights_and_rates.py`` (about a minute).
"""
import numpy as np

from intensity_lasso.experiments import oracle_fixture, rate_fixture, rate_sweep, simulate_cohort
from intensity_lasso.likelihood import CompiledProblem
from intensity_lasso.weights import penalty_weights

# %% Compare the weights with the score of each covariate at beta = 0. A
# coefficient can only enter the fit if its score exceeds its weight.
for n in (400, 1600, 6400):
    design, spec = oracle_fixture(n=n)
    cohort, _ = simulate_cohort(design)
    dicts = spec.build(cohort)
    w = penalty_weights(cohort, dicts)
    score = np.abs(CompiledProblem(cohort, dicts).grad(np.zeros(dicts.M + dicts.N))[:dicts.M])
    print(f"n={n:5d}: max score {score.max():.3f}, min weight {w.omega.min():.3f}")

# %% At these sizes the weights win, so the unscaled estimate is zero and its
# error does not shrink. The confidence term alone adds roughly x/nu to the
# variance proxy, which keeps the weights large until n is in the thousands.

# %% With the weights scaled by 0.1 the true coefficients stay active and the
# mean divergence falls roughly like 1/n.
design, spec, opts = rate_fixture()
out = rate_sweep(design, spec, ns=(200, 400, 800), R=30, opts=opts)
for row in out["table"]:
    print(f"n={row['n']:4d}: mean divergence {row['mean_kl']:.4f} (se {row['se']:.4f})")
print(f"log-log slope {out['slopes'][str(design.p)]:.2f}")
