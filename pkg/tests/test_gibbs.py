import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pacbound.core import log_sum_exp
from pacbound.gibbs import draw, draw_seed, gibbs_posterior, level_quantile, restrict
from pacbound.model import SubmodelGrid

# e^-1 / (e^-1 + e^-2), mpmath
W0 = 0.7310585786300048792512


def two_atoms():
    return SubmodelGrid.uniform(0, [[0.0], [1.0]], 1.0)


def test_gibbs_examples():
    g = two_atoms()
    post = gibbs_posterior(g, [0.2, 0.4], 5.0)
    assert post.weights == pytest.approx([W0, 1 - W0], abs=1e-12)
    assert log_sum_exp(post.log_weights) == pytest.approx(0.0, abs=1e-10)
    flat = gibbs_posterior(g, [0.2, 0.4], 0.0)
    assert np.array_equal(flat.log_weights, g.prior_log_weights)
    sharp = gibbs_posterior(g, [0.2, 0.4], 1e6)
    assert sharp.weights == pytest.approx([1.0, 0.0], abs=1e-9)


def test_gibbs_rejects_empty_support():
    with pytest.raises(ValueError):
        gibbs_posterior(two_atoms(), [math.inf, math.inf], 1.0)


def test_level_quantile_examples():
    post = gibbs_posterior(two_atoms(), [0.2, 0.4], 5.0)
    assert level_quantile(post, 0.5) == 0.0
    assert level_quantile(post, 0.8) == pytest.approx(0.2)
    assert level_quantile(post, 1.0) == pytest.approx(0.2)


def test_restrict_examples():
    post = gibbs_posterior(two_atoms(), [0.2, 0.4], 5.0)
    full = restrict(post, 1.0)
    assert full.support_mask.all() and full.log_renorm == 0.0
    assert full.log_density_ratio(1) == 0.0
    half = restrict(post, 0.5)
    assert list(half.support_mask) == [True, False]
    assert half.log_renorm == pytest.approx(math.log(W0), abs=1e-12)
    single = restrict(gibbs_posterior(SubmodelGrid.uniform(0, [[1.0]], 1.0), [0.3], 2.0), 0.3)
    assert single.support_mask.all() and single.log_renorm == 0.0


def test_draw_examples():
    single = restrict(gibbs_posterior(SubmodelGrid.uniform(0, [[1.0]], 1.0), [0.3], 2.0), 1.0)
    assert {draw(single, s) for s in range(20)} == {0}
    rho = restrict(gibbs_posterior(two_atoms(), [0.2, 0.4], 5.0), 1.0)
    assert draw(rho, 12345) == draw(rho, 12345)
    n = 100_000
    hits = sum(draw(rho, draw_seed(7, 0, 0, r)) == 0 for r in range(n))
    freq = hits / n
    # chi-square goodness of fit with one degree of freedom, 99.9% level
    chi2 = (hits - n * W0) ** 2 / (n * W0) + (n - hits - n * (1 - W0)) ** 2 / (n * (1 - W0))
    assert chi2 < 10.83
    assert abs(freq - W0) < 0.01


def test_draw_seed_distinguishes_candidates():
    seeds = {draw_seed(1, i, b, r) for i in range(3) for b in range(3) for r in range(3)}
    assert len(seeds) == 27


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 5), min_size=1, max_size=12), st.floats(0, 200), st.floats(-50, 50))
def test_gibbs_shift_invariance(risks, beta, c):
    g = SubmodelGrid.uniform(0, np.arange(len(risks))[:, None], 1.0)
    a = gibbs_posterior(g, risks, beta).log_weights
    b = gibbs_posterior(g, np.asarray(risks) + c, beta).log_weights
    assert np.allclose(a, b, atol=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 5), min_size=1, max_size=12), st.floats(0, 100), st.floats(0, 100))
def test_argmin_mass_nondecreasing_in_beta(risks, b1, b2):
    lo, hi = sorted((b1, b2))
    g = SubmodelGrid.uniform(0, np.arange(len(risks))[:, None], 1.0)
    k = int(np.argmin(risks))
    m_lo = gibbs_posterior(g, risks, lo).weights[k]
    m_hi = gibbs_posterior(g, risks, hi).weights[k]
    assert m_hi >= m_lo - 1e-12


@settings(max_examples=150, deadline=None)
@given(
    st.lists(st.floats(0, 2), min_size=1, max_size=15),
    st.floats(0, 50),
    st.floats(0.01, 1.0),
    st.floats(0.01, 1.0),
)
def test_restriction_invariants(risks, beta, q1, q2):
    g = SubmodelGrid.uniform(0, np.arange(len(risks))[:, None], 1.0)
    post = gibbs_posterior(g, risks, beta)
    for q in (q1, q2):
        rho = restrict(post, q)
        gaps = np.asarray(risks) - min(risks)
        assert np.array_equal(rho.support_mask, gaps <= rho.p_level)
        assert post.weights[rho.support_mask].sum() >= q - 1e-9
        assert math.exp(-rho.log_renorm) <= 1 / q + 1e-12
    lo, hi = sorted((q1, q2))
    assert level_quantile(post, lo) <= level_quantile(post, hi)
