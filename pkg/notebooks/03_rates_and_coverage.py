# ---
# jupyter:
#   jupytext:
#     formats: ipynb,py:percent
#     text_representation:
#       extension: .py
#       format_name: percent
#       format_version: '1.3'
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Does the selected estimator improve with more data?
#
# Small versions of the coverage and rate experiments from the acceptance
# suite. Bump `REPLICATES` for smoother numbers.

# %%
import numpy as np

from pacbound.oracle import (
    CoverageConfig,
    RateConfig,
    assumption_estimates,
    coverage,
    rate_experiment,
    threshold_grids,
    threshold_world,
)

REPLICATES = 20
world = threshold_world()

# %% [markdown]
# ## Coverage
#
# Fresh data and fresh draws on each replicate. A violation means the true
# truncated risk gap exceeded the empirical bound for some pair and scale.

# %%
cfg = CoverageConfig(world, tuple(threshold_grids((2, 4))), N=100, epsilon=0.1)
for theorem in ("single_pair", "all_pairs"):
    r = coverage(cfg, theorem, REPLICATES, seed=7)
    print(f"{theorem}: {r['violations']} violations in {r['replicates']} replicates")

# %% [markdown]
# ## Excess risk against sample size

# %%
grids = tuple(threshold_grids((0, 1, 2, 3, 4)))
res = rate_experiment(RateConfig(world, grids), [100, 400, 1600], REPLICATES, seed=7)
for N, med, mean in zip(res["Ns"], res["median"], res["mean"]):
    print(f"N={N:5d}  median excess {med:.4f}  mean excess {mean:.4f}")

# %% [markdown]
# ## Margin, dimension and the reference rate
#
# Zero-one loss with 15% label noise has a linear margin: the variance of
# the loss difference is exactly R'/0.7 for every suboptimal threshold.

# %%
for N in res["Ns"]:
    est = assumption_estimates(world, grids, N, q=1.0, epsilon=0.1)
    print(f"N={N:5d}  c={est.c:.4f}  d_i={np.round(est.d_i, 3)}  min delta_N={min(est.delta_N):.4f}")
