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
# # Checking the inequalities by simulation
#
# On a finite world the left side of every probabilistic inequality is
# an exact sum, so each one turns into a Monte Carlo test. All checks use
# a budget of four standard errors.

# %%
import numpy as np

from pacbound.oracle import (
    HEAVY_TAIL_MOMENTS,
    bounded_world,
    check_bernstein_variant,
    check_deviation_identity,
    check_legendre_duality,
    check_truncation_bound,
    heavy_tail_world,
    three_point_world,
)

# %% [markdown]
# ## An exponential moment that equals one
#
# The loss differences here are -1, 0.5 and 6. At lambda = 8 the cap
# N/lambda = 2.5 clips the largest one, and the identity still holds.

# %%
w3 = three_point_world()
for lam in (1.0, 4.0, 8.0):
    r = check_deviation_identity(w3, 0, 1, a=1.0, lam=lam, N=20, replicates=50_000, seed=0)
    print(f"lambda {lam:3g}: mean {r['mean']:.4f} +- {r['se']:.4f}  passed={r['passed']}")

# %% [markdown]
# ## Bernstein-type moments stay below one

# %%
bw = bounded_world(1.0)
for which, lam in (("upper", 5.0), ("lower", 5.0), ("variance", None)):
    r = check_bernstein_variant(bw, 0, 1, lam, which, N=20, C=1.0, replicates=50_000, seed=0)
    print(f"{which}: mean {r['mean']:.4f} +- {r['se']:.4f}")

# %% [markdown]
# ## Duality between log-moments and relative entropy

# %%
rng = np.random.default_rng(3)
n = rng.dirichlet(np.ones(6))
h = rng.normal(size=6)
r = check_legendre_duality(n, h, random_m_count=500, seed=3)
print(f"log-moment {r['lhs']:.6f}, value at the Gibbs measure {r['rhs']:.6f}, "
      f"best random competitor {r['max_excess']:+.3g}")

# %% [markdown]
# ## What truncation costs
#
# A rare loss of 8 (probability 1e-4) and an occasional 3. The exact cost
# of clipping at N/lambda sits far below the exponential-moment bound.

# %%
hw = heavy_tail_world()
b, B = HEAVY_TAIL_MOMENTS
for lam in (25.0, 50.0, 100.0):
    r = check_truncation_bound(hw, 0, 1, lam, 100, b, B)
    print(f"lambda {lam:5g}: lost {r['lhs']:.4f}, bound {r['delta']:.4f}")
