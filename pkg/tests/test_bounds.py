import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pacbound.bounds import (
    BoundParams,
    Candidate,
    TruncationError,
    TruncationModel,
    bound_matrix,
    complexity_C,
    delta_correction,
    localized_BK,
    localized_D,
    pair_bound_B,
    pair_bound_decomposed,
    pair_inner,
    symmetric_bound,
    truncated_diff_mean,
    variance_v,
)
from pacbound.core import kl_divergence, phi_inv
from pacbound.gibbs import gibbs_posterior, restrict
from pacbound.model import Dataset, LossModel, ParameterGridNu, SubmodelGrid
from pacbound.oracle import threshold_grids, threshold_world
from pacbound.selection import build_candidates

# frozen from 40-digit mpmath evaluations of the closed forms
TDM_EXAMPLE = -0.08846864798760815
V_EXAMPLE = 0.04612540804956739
DELTA_EXAMPLE = 0.02695178799634187  # 4 exp(-5)
D_EXAMPLE = (0.02053940720838187916, 0.03244985967595972251)
BK_EXAMPLE = 0.02602783374427779984
PENALTY_ONLY_B = 0.8479285580897726286
C_EXAMPLE = 13.22954165121843559946

BOUNDED = TruncationModel("bounded", bound=1.0)


def test_truncated_diff_mean_examples():
    assert truncated_diff_mean([0.0, 0.0, 0.0], 2.0, 0.5) == 0.0
    assert truncated_diff_mean([0.1, -0.3], 2.0, 0.5) == pytest.approx(TDM_EXAMPLE, abs=1e-12)
    # a = 1: a diff at N/lambda hits the domain boundary
    assert truncated_diff_mean([3.0, 0.0], 2.0, 0.5) == math.inf


def test_variance_v_examples():
    assert variance_v([0.1, -0.3], 1.0, 1.0, 2) == pytest.approx(V_EXAMPLE, abs=1e-12)
    assert variance_v([0.1, -0.3], 1.0, 1.0, 2) <= 0.05
    assert variance_v([0.0] * 5, 1.0, 1.0, 5) == 0.0
    c = 0.4
    v = variance_v([c] * 1000, 1.0, 1e-3, 1000)
    assert v == pytest.approx(c**2, rel=1e-5)


def test_variance_v_weights_match_expanded_sample():
    d = np.array([0.3, -0.2, 0.9])
    w = np.array([2, 0, 5])
    expanded = np.repeat(d, w)
    assert variance_v(d, 1.0, 2.0, 7, weights=w) == pytest.approx(variance_v(expanded, 1.0, 2.0, 7), abs=1e-14)


def test_delta_correction_examples():
    assert delta_correction(TruncationModel("bounded", bound=0.3), 1.0, 100) == 0.0
    em = TruncationModel("expmoment", b=1.0, B=2.0)
    assert delta_correction(em, 10.0, 100) == pytest.approx(DELTA_EXAMPLE, abs=1e-15)
    vals = [delta_correction(em, 10.0, n) for n in (10, 50, 100, 500)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert delta_correction(TruncationModel("zero"), 5.0, 10) == 0.0
    with pytest.raises(TruncationError):
        delta_correction(TruncationModel("bounded", bound=2.0), 60.0, 100)


def test_truncation_model_from_loss():
    assert TruncationModel.from_loss(LossModel("zero-one")) == TruncationModel("bounded", bound=1.0)
    em = TruncationModel.from_loss(LossModel("negative-log-density", expmoment=(1.0, 3.0)))
    assert em.kind == "expmoment" and em.B == 3.0
    clamp = TruncationModel.from_loss(LossModel("least-squares", clamp=4.0))
    assert clamp == TruncationModel("bounded", bound=4.0)


def _two_atom_case():
    table = np.array([[0.4, 0.2], [0.3, 0.5]])
    grid = SubmodelGrid.uniform(0, [[0.0], [1.0]], 1.0)
    post = gibbs_posterior(grid, table.mean(axis=1), 1.0)
    params = BoundParams(1.0, 0.1, 2.0, ParameterGridNu.uniform([1.0, 2.0]), 2)
    return table, post, params


def test_localized_D_examples():
    table, post, params = _two_atom_case()
    rho = restrict(post, 1.0)
    for atom, expected in enumerate(D_EXAMPLE):
        assert localized_D(post, rho, atom, 2.0, params, table, truncation=BOUNDED) == pytest.approx(expected, abs=1e-14)
    with pytest.raises(ValueError):
        localized_D(post, rho, 0, 1.0, params, table)
    single = SubmodelGrid.uniform(0, [[0.0]], 1.0)
    sp = gibbs_posterior(single, [0.3], 1.0)
    assert localized_D(sp, restrict(sp, 1.0), 0, 2.0, params, np.array([[0.3, 0.3]])) == 0.0


def test_localized_BK_examples():
    table, post, params = _two_atom_case()
    rho = restrict(post, 1.0)
    assert localized_BK(post, rho, 2.0, params, table, truncation=BOUNDED) == pytest.approx(BK_EXAMPLE, abs=1e-14)
    single = SubmodelGrid.uniform(0, [[0.0]], 1.0)
    sp = gibbs_posterior(single, [0.3], 1.0)
    assert localized_BK(sp, restrict(sp, 1.0), 2.0, params, np.array([[0.3, 0.3]])) == 0.0
    with pytest.raises(ValueError):
        localized_BK(post, rho, 0.5, params, table)


def test_restricted_kl_equals_minus_log_mass():
    grid = SubmodelGrid.uniform(0, np.arange(4)[:, None], 1.0)
    post = gibbs_posterior(grid, [0.1, 0.2, 0.5, 0.9], 3.0)
    rho = restrict(post, 0.6)
    direct = kl_divergence(rho.weights, post.weights)
    assert direct == pytest.approx(-rho.log_renorm, abs=1e-12)


def test_complexity_examples():
    nu = ParameterGridNu.uniform([1.0, 2.0, 4.0, 8.0])
    params = BoundParams(1.0, 0.1, 2.0, nu, 100)
    val, g = complexity_C(0, [math.inf, 0.0, 0.0, 0.0], 0.0, params)
    assert val == pytest.approx(C_EXAMPLE, abs=1e-12)
    assert nu.grid[g] == 8.0
    assert complexity_C(3, [0.0] * 4, 0.0, params) == (math.inf, None)


def test_complexity_interior_argmin_matches_scan():
    nu = ParameterGridNu.uniform([1.0, 2.0, 4.0, 8.0, 16.0, 32.0])
    params = BoundParams(1.0, 0.05, 1.5, nu, 1000)
    d_row = np.array([math.inf, 0.1, 0.5, 2.0, 6.0, 20.0])
    val, g = complexity_C(0, d_row, math.log(0.5), params)
    scan = []
    for k, gam in enumerate(nu.grid):
        if gam < 1.5:
            continue
        pen = (1 / (gam - 1) + 1 / 0.5 + 1) * math.log(3 / (0.05 * 0.5 * (1 / 6) ** 2))
        scan.append((d_row[k] + pen, k))
    best = min(scan)
    assert val == pytest.approx(best[0], abs=1e-12) and g == best[1]
    assert 0 < g < len(nu) - 1


def _single_atom_candidate(i, nu, beta_index=0, losses=None, risk=0.0):
    losses = np.zeros(8) if losses is None else losses
    beta = nu.grid[beta_index]
    d_row = np.where(nu.grid > beta, 0.0, math.inf)
    return Candidate(i, beta_index, beta, 0, losses, risk, d_row, math.log(0.5), nu.log_mass[beta_index])


def test_pair_bound_penalty_only():
    nu = ParameterGridNu.uniform([1.0, 2.0, 4.0, 8.0])
    params = BoundParams(1.0, 0.1, 2.0, nu, 8)
    t, tp = _single_atom_candidate(0, nu), _single_atom_candidate(1, nu)
    terms = pair_bound_B(t, tp, params)
    assert terms.r_diff == 0.0 and terms.v_term == 0.0
    assert terms.bound_value == pytest.approx(PENALTY_ONLY_B, abs=1e-14)
    assert terms.bound_value > 0
    again = phi_inv(terms.argmin_params[0] / 8, pair_inner(terms, t, tp, params))
    assert again == pytest.approx(terms.bound_value, abs=1e-10)


def test_pair_bound_no_admissible_triple():
    nu = ParameterGridNu.uniform([1.0, 2.0])
    params = BoundParams(1.0, 0.1, 2.0, nu, 8)
    t = _single_atom_candidate(0, nu, beta_index=1)
    terms = pair_bound_B(t, t, params)
    assert terms.bound_value == math.inf and terms.argmin_params is None


def _pipeline_candidates(N=60, seed=5, q=1.0, levels=(1, 3)):
    world = threshold_world()
    rng = np.random.default_rng(seed)
    counts = world.sample_counts(N, rng)
    params = BoundParams(1.0, 0.1, 2.0, ParameterGridNu.dyadic(N), N)
    cands = build_candidates(world.support, threshold_grids(levels), world.loss, params, q, seed, weights=counts)
    return world, counts, params, cands


def test_matrix_agrees_with_scalar_and_reevaluation():
    _, counts, params, cands = _pipeline_candidates()
    B, terms = bound_matrix(cands, params, counts)
    for k in range(0, len(cands), 3):
        for j in range(0, len(cands), 4):
            single = pair_bound_B(cands[k], cands[j], params, counts)
            assert single.bound_value == B[k, j]
            if np.isfinite(B[k, j]):
                lam = terms[k][j].argmin_params[0]
                again = phi_inv(lam / params.N, pair_inner(terms[k][j], cands[k], cands[j], params))
                assert abs(again - B[k, j]) <= 1e-10


def test_self_pairs_positive():
    _, counts, params, cands = _pipeline_candidates()
    B, _ = bound_matrix(cands, params, counts)
    assert np.all(np.diag(B) > 0)


def test_decomposed_dominates_exact():
    _, counts, params, cands = _pipeline_candidates()
    B, _ = bound_matrix(cands, params, counts)
    checked = 0
    for k, t in enumerate(cands):
        for j, tp in enumerate(cands):
            dec = pair_bound_decomposed(t, tp, params, counts)
            if np.isfinite(t.complexity) and np.isfinite(tp.complexity):
                assert dec >= B[k, j] - 1e-12
                checked += 1
    assert checked > 0
    inf_cand = Candidate(0, 0, 1.0, 0, np.zeros(params.N), 0.0, np.full(len(params.nu), math.inf), 0.0, 0.0)
    assert pair_bound_decomposed(inf_cand, inf_cand, params) == math.inf


def test_symmetric_bound_dominates_pair_sums():
    _, counts, params, cands = _pipeline_candidates()
    B, _ = bound_matrix(cands, params, counts)
    for k, t in enumerate(cands):
        for j, tp in enumerate(cands):
            if np.isfinite(t.complexity) and np.isfinite(tp.complexity):
                s = symmetric_bound(t, tp, params, counts)
                assert s == symmetric_bound(tp, t, params, counts)
                assert s >= B[k, j] + B[j, k] - 1e-12


def test_zero_mass_extension_is_bit_identical():
    world, counts, params, cands = _pipeline_candidates()
    B, _ = bound_matrix(cands, params, counts)
    wide = params.nu.extended([3.0, 5.0, 100.0])
    params2 = BoundParams(params.a, params.epsilon, params.zeta, wide, params.N)
    cands2 = build_candidates(world.support, threshold_grids((1, 3)), world.loss, params2, 1.0, 5, weights=counts)
    B2, _ = bound_matrix(cands2, params2, counts)
    assert np.array_equal(B, B2)


def test_row_permutation_invariance():
    world = threshold_world()
    rng = np.random.default_rng(11)
    idx = rng.choice(world.K, size=40, p=world.probs)
    data = Dataset(world.support.x[idx], world.support.y[idx])
    perm = rng.permutation(40)
    shuffled = Dataset(data.x[perm], data.y[perm])
    params = BoundParams(1.0, 0.1, 2.0, ParameterGridNu.dyadic(40), 40)
    grids = threshold_grids((1, 2))
    c1 = build_candidates(data, grids, world.loss, params, 1.0, 3)
    c2 = build_candidates(shuffled, grids, world.loss, params, 1.0, 3)
    B1, _ = bound_matrix(c1, params)
    B2, _ = bound_matrix(c2, params)
    assert np.allclose(B1, B2, rtol=1e-12, atol=1e-12)


def test_jobs_do_not_change_matrix():
    _, counts, params, cands = _pipeline_candidates()
    B1, _ = bound_matrix(cands, params, counts, jobs=1)
    B4, _ = bound_matrix(cands, params, counts, jobs=4)
    assert np.array_equal(B1, B4)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 40))
def test_truncated_mean_above_plain_truncated_mean(seed, N):
    rng = np.random.default_rng(seed)
    d = rng.uniform(-1, 1, N)
    for lam in (1.0, N / 4, N / 2):
        cap = N / lam
        assert truncated_diff_mean(d, cap, lam / N) >= np.mean(np.minimum(d, cap)) - 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 1.0))
def test_localized_D_finite_and_above_log_mass(seed, q):
    rng = np.random.default_rng(seed)
    table = rng.uniform(0, 1, size=(6, 20))
    grid = SubmodelGrid.uniform(0, np.arange(6)[:, None], 1.0)
    post = gibbs_posterior(grid, table.mean(axis=1), 2.0)
    rho = restrict(post, q)
    params = BoundParams(1.0, 0.1, 2.0, ParameterGridNu.uniform([2.0, 4.0, 8.0]), 20)
    atom = int(np.flatnonzero(rho.support_mask)[0])
    for gamma in (4.0, 8.0):
        D = localized_D(post, rho, atom, gamma, params, table, truncation=BOUNDED)
        assert np.isfinite(D)
        # v >= 0 when no cap is active, so the log-integral is >= 0
        assert D >= -rho.log_renorm / (1 - 2.0 / gamma) - 1e-12
        assert D >= rho.log_renorm / (1 - 2.0 / gamma) - 1e-12
