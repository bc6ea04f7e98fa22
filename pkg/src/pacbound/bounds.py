"""Empirical bound functionals over finite grids.

Samples may be passed either as one column per observation or as
distinct support points with integer multiplicities (``weights``); the two
representations give identical values. ``N`` is always the sample size.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import kl_divergence, log_sum_exp, phi, phi_inv
from .gibbs import GibbsPosterior, RestrictedPosterior
from .model import LossModel, ParameterGridNu

LOG3 = math.log(3.0)
# relative slack for grid comparisons such as gamma >= zeta * beta
_GRID_TOL = 1e-12


class TruncationError(ValueError):
    """Bounded-mode truncation correction requested outside its guarantee."""


@dataclass(frozen=True)
class BoundParams:
    a: float
    epsilon: float
    zeta: float
    nu: ParameterGridNu
    N: int

    def __post_init__(self):
        if not 0 < self.a <= 1:
            raise ValueError("a must lie in (0,1]")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0,1)")
        if not self.zeta > 1:
            raise ValueError("zeta must be > 1")
        if self.N < 1:
            raise ValueError("N must be positive")

    def nu_index(self, value: float) -> int:
        idx = np.flatnonzero(np.isclose(self.nu.grid, value, rtol=_GRID_TOL, atol=0))
        if idx.size == 0:
            raise ValueError(f"{value} is not in supp(nu)")
        return int(idx[0])


@dataclass(frozen=True)
class TruncationModel:
    """How the truncation correction Delta is obtained for a loss.

    ``bounded``: losses in ``[0, bound]``, Delta = 0 while ``lambda <= N / bound``.
    ``expmoment``: Delta = ``(2B/b) exp(-b N / (2 lambda))``.
    ``zero``: the caller certifies that no truncation occurs.
    """

    kind: str
    bound: Optional[float] = None
    b: Optional[float] = None
    B: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("bounded", "expmoment", "zero"):
            raise ValueError(f"unknown truncation mode {self.kind!r}")
        if self.kind == "bounded" and (self.bound is None or self.bound < 0):
            raise ValueError("bounded mode needs a nonnegative bound")
        if self.kind == "expmoment" and (not self.b or not self.B or self.b <= 0 or self.B <= 0):
            raise ValueError("expmoment mode needs positive (b, B)")

    @classmethod
    def from_loss(cls, loss: LossModel) -> "TruncationModel":
        if loss.expmoment is not None:
            return cls("expmoment", b=loss.expmoment[0], B=loss.expmoment[1])
        return cls("bounded", bound=loss.bound)


def delta_correction(mode: TruncationModel, lambda_over_a: float, N: int) -> float:
    """Upper bound on ``R(theta) - R(theta') - R_lambda(theta, theta')`` at ``lambda = lambda_over_a``."""
    if lambda_over_a <= 0:
        raise ValueError("lambda must be positive")
    if mode.kind == "zero":
        return 0.0
    if mode.kind == "bounded":
        if lambda_over_a * mode.bound > N * (1 + _GRID_TOL):
            raise TruncationError(
                f"bounded mode needs lambda/a <= N/C = {N / mode.bound if mode.bound else math.inf}, "
                f"got {lambda_over_a}"
            )
        return 0.0
    return 2.0 * mode.B / mode.b * math.exp(-mode.b * N / (2.0 * lambda_over_a))


def _sample_weights(n_points: int, weights, N: int) -> np.ndarray:
    if weights is None:
        if n_points != N:
            raise ValueError(f"{n_points} samples but N = {N}")
        return np.ones(n_points)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n_points,):
        raise ValueError("one weight per sample point is required")
    if abs(w.sum() - N) > 1e-9 * max(N, 1):
        raise ValueError(f"weights sum to {w.sum()} but N = {N}")
    return w


def _phi_mean(diffs: np.ndarray, alpha: float, cap: float, w: np.ndarray, N: int) -> np.ndarray:
    """Weighted ``(1/N) sum phi_alpha(min(d, cap))`` along the last axis."""
    vals = phi(alpha, np.minimum(diffs, cap))
    vals = np.where(w > 0, vals, 0.0)
    return np.sum(vals * w, axis=-1) / N


def truncated_diff_mean(loss_diffs, cap: float, alpha: float, weights=None):
    """``(1/N) sum phi_alpha(d_i ^ cap)``; ``+inf`` once a capped diff reaches ``1/alpha``."""
    d = np.asarray(loss_diffs, dtype=float)
    w = np.ones(d.shape[-1]) if weights is None else np.asarray(weights, dtype=float)
    out = _phi_mean(d, alpha, cap, w, w.sum())
    return float(out) if np.ndim(out) == 0 else out


def variance_v(loss_diffs, a: float, lam: float, N: int, weights=None):
    """Empirical variance proxy ``(2N/lambda)[(1/N) sum phi(d ^ aN/lambda) - mean d]``."""
    d = np.asarray(loss_diffs, dtype=float)
    w = _sample_weights(d.shape[-1], weights, N)
    alpha = lam / N
    tdm = _phi_mean(d, alpha, a * N / lam, w, N)
    mean = np.sum(d * w, axis=-1) / N
    with np.errstate(invalid="ignore"):
        out = (2.0 * N / lam) * (tdm - mean)
    out = np.where(np.isposinf(tdm), np.inf, out)
    return float(out) if np.ndim(out) == 0 else out


def _check_temperatures(beta: float, gamma: float):
    if not 0 < beta < gamma:
        raise ValueError(f"need 0 < beta < gamma, got beta={beta}, gamma={gamma}")


def localized_D(
    post: GibbsPosterior,
    rho: RestrictedPosterior,
    theta_tilde: int,
    gamma: float,
    params: BoundParams,
    losses,
    weights=None,
    truncation: TruncationModel = TruncationModel("zero"),
) -> float:
    """Pointwise empirical localized complexity of a drawn atom.

    ``losses`` is the submodel's loss table (atoms x sample points).
    """
    beta = post.beta
    _check_temperatures(beta, gamma)
    if not rho.support_mask[theta_tilde]:
        raise ValueError("theta_tilde is outside the support of rho")
    losses = np.asarray(losses, dtype=float)
    N = params.N
    delta = delta_correction(truncation, gamma / params.a, N)
    diffs = losses[theta_tilde][None, :] - losses
    v = variance_v(diffs, params.a, gamma, N, weights)
    live = np.isfinite(post.log_weights)
    expo = beta * gamma / (2.0 * N) * v[live] + beta * delta
    if np.any(np.isposinf(expo)):
        return math.inf
    lse = log_sum_exp(post.log_weights[live] + expo)
    return (rho.log_density_ratio(theta_tilde) + lse) / (1.0 - beta / gamma)


def localized_BK(
    post: GibbsPosterior,
    rho: RestrictedPosterior,
    gamma: float,
    params: BoundParams,
    losses,
    weights=None,
    truncation: TruncationModel = TruncationModel("zero"),
) -> float:
    """Integrated empirical localized complexity of a posterior ``rho``."""
    beta = post.beta
    _check_temperatures(beta, gamma)
    losses = np.asarray(losses, dtype=float)
    N = params.N
    delta = delta_correction(truncation, gamma / params.a, N)
    kl = kl_divergence(rho.weights, post.weights)
    if math.isinf(kl):
        return math.inf
    live = np.isfinite(post.log_weights)
    support = np.flatnonzero(rho.support_mask)
    rho_w = rho.weights[support]
    # v(theta, theta') for theta in supp(rho) (rows) and live theta' (columns)
    diffs = losses[support][:, None, :] - losses[live][None, :, :]
    v = variance_v(diffs, params.a, gamma, N, weights)
    inner = beta * gamma / (2.0 * N) * v + beta * delta
    if np.any(np.isposinf(inner)):
        return math.inf
    integrated = rho_w @ inner
    lse = log_sum_exp(post.log_weights[live] + integrated)
    return (kl + lse) / (1.0 - beta / gamma)


def d_over_nu(
    post: GibbsPosterior,
    rho: RestrictedPosterior,
    theta_tilde: int,
    params: BoundParams,
    losses,
    weights=None,
    truncation: TruncationModel = TruncationModel("zero"),
) -> np.ndarray:
    """``localized_D`` at every ``gamma`` of the nu grid; ``+inf`` where inadmissible.

    A gamma is inadmissible when ``gamma <= beta`` or when the truncation
    correction has no guarantee there (bounded losses with ``gamma/a > N/C``).
    """
    out = np.full(len(params.nu), math.inf)
    for g, gamma in enumerate(params.nu.grid):
        if gamma <= post.beta:
            continue
        try:
            out[g] = localized_D(post, rho, theta_tilde, gamma, params, losses, weights, truncation)
        except TruncationError:
            continue
    return out


def complexity_C(beta_index: int, d_row, log_mu: float, params: BoundParams):
    """Complexity of candidate ``(i, beta)``: minimum over ``gamma >= zeta beta`` in supp(nu).

    ``d_row`` holds ``localized_D`` over the nu grid. Returns
    ``(value, gamma_index)``; ``(inf, None)`` when no gamma is admissible.
    """
    nu = params.nu
    beta = nu.grid[beta_index]
    d_row = np.asarray(d_row, dtype=float)
    gammas = nu.grid
    admissible = gammas >= params.zeta * beta * (1 - _GRID_TOL)
    if not admissible.any():
        return math.inf, None
    with np.errstate(divide="ignore"):
        coef = beta / (gammas - beta) + 1.0 / (params.zeta - 1.0) + 1.0
    log_term = LOG3 - math.log(params.epsilon) - log_mu - nu.log_mass[beta_index] - nu.log_mass
    with np.errstate(invalid="ignore"):
        vals = np.where(admissible, d_row + coef * log_term, math.inf)
    g = int(np.argmin(vals))
    if not np.isfinite(vals[g]):
        return math.inf, None
    return float(vals[g]), g


@dataclass
class Candidate:
    """A candidate ``t = (i, beta)`` with its drawn atom and cached bound inputs."""

    model_index: int
    beta_index: int
    beta: float
    atom: int
    losses: np.ndarray
    risk: float
    d_row: np.ndarray
    log_mu: float
    log_nu_beta: float
    posterior: Optional[GibbsPosterior] = field(default=None, repr=False)
    restricted: Optional[RestrictedPosterior] = field(default=None, repr=False)
    complexity: float = math.inf
    gamma_index: Optional[int] = None

    @property
    def key(self) -> tuple:
        return (self.model_index, self.beta_index)


@dataclass(frozen=True)
class PairBoundTerms:
    t: tuple
    t_prime: tuple
    r_diff: float
    v_term: float
    d_t: float
    d_tprime: float
    log_penalty: float
    bound_value: float
    argmin_params: Optional[tuple]

    def to_dict(self) -> dict:
        return {
            "t": list(self.t),
            "t_prime": list(self.t_prime),
            "r_diff": self.r_diff,
            "v_term": self.v_term,
            "d_t": self.d_t,
            "d_tprime": self.d_tprime,
            "log_penalty": self.log_penalty,
            "bound_value": self.bound_value,
            "argmin_params": None if self.argmin_params is None else list(self.argmin_params),
        }


def _coef_row(beta: float, gammas: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(gammas > beta, beta / (gammas - beta), np.nan)


def _bound_row(t: Candidate, others: list, params: BoundParams, w: np.ndarray) -> dict:
    """Pair bounds of ``t`` against every candidate in ``others``.

    Returns per-pair minima together with the argmin (lambda, gamma, gamma')
    indices and the terms needed for reporting.
    """
    N, a, nu = params.N, params.a, params.nu
    lams = nu.grid
    G = lams.size
    M = len(others)
    L_other = np.vstack([o.losses for o in others])
    diffs = t.losses[None, :] - L_other
    r_diff = t.risk - np.array([o.risk for o in others])

    # first-order part r' + (lambda/2N) v, one column per lambda
    v = np.empty((M, G))
    for l, lam in enumerate(lams):
        v[:, l] = variance_v(diffs, a, lam, N, w)
    with np.errstate(invalid="ignore"):
        first = r_diff[:, None] + lams[None, :] / (2.0 * N) * v
    first = np.where(np.isposinf(v), np.inf, first)

    b_t = _coef_row(t.beta, nu.grid)
    b_o = np.vstack([_coef_row(o.beta, nu.grid) for o in others])
    coef = 1.0 + b_t[None, :, None] + b_o[:, None, :]
    D_t = t.d_row
    D_o = np.vstack([o.d_row for o in others])
    log_mu_o = np.array([o.log_mu for o in others])
    log_nub_o = np.array([o.log_nu_beta for o in others])
    base = (
        LOG3 - math.log(params.epsilon) - t.log_mu - t.log_nu_beta
        - log_mu_o - log_nub_o
    )
    # log penalty over (pair, lambda, gamma, gamma')
    log_pen = (
        base[:, None, None, None]
        - nu.log_mass[None, :, None, None]
        - nu.log_mass[None, None, :, None]
        - nu.log_mass[None, None, None, :]
    )
    with np.errstate(invalid="ignore"):
        total = D_t[None, None, :, None] + D_o[:, None, None, :] + coef[:, None, :, :] * log_pen
        inner = first[:, :, None, None] + total / lams[None, :, None, None]
    inner = np.where(np.isnan(inner), np.inf, inner)
    flat = inner.reshape(M, G, G * G)
    gg = np.argmin(flat, axis=2)
    inner_min = np.take_along_axis(flat, gg[:, :, None], axis=2)[:, :, 0]
    per_lam = np.full((M, G), np.inf)
    for l, lam in enumerate(lams):
        fin = np.isfinite(inner_min[:, l])
        per_lam[fin, l] = phi_inv(lam / N, inner_min[fin, l])
    best_l = np.argmin(per_lam, axis=1)
    rows = np.arange(M)
    best = per_lam[rows, best_l]
    best_gg = gg[rows, best_l]
    return {
        "bound": best,
        "lam_idx": best_l,
        "gamma_idx": best_gg // G,
        "gammap_idx": best_gg % G,
        "r_diff": r_diff,
        "v": v,
        "log_pen": log_pen,
        "D_o": D_o,
        "per_lambda": per_lam,
    }


def _terms_from_row(t: Candidate, others: list, row: dict, params: BoundParams) -> list:
    out = []
    grid = params.nu.grid
    for m, o in enumerate(others):
        bound = float(row["bound"][m])
        if not np.isfinite(bound):
            out.append(PairBoundTerms(t.key, o.key, float(row["r_diff"][m]), math.nan,
                                      math.inf, math.inf, math.inf, math.inf, None))
            continue
        l, g, gp = int(row["lam_idx"][m]), int(row["gamma_idx"][m]), int(row["gammap_idx"][m])
        out.append(PairBoundTerms(
            t=t.key,
            t_prime=o.key,
            r_diff=float(row["r_diff"][m]),
            v_term=float(row["v"][m, l]),
            d_t=float(t.d_row[g]),
            d_tprime=float(row["D_o"][m, gp]),
            log_penalty=float(row["log_pen"][m, l, g, gp]),
            bound_value=bound,
            argmin_params=(float(grid[l]), float(grid[g]), float(grid[gp])),
        ))
    return out


def pair_bound_B(t: Candidate, t_prime: Candidate, params: BoundParams, weights=None) -> PairBoundTerms:
    """Grid-optimised bound on the truncated relative risk of two drawn candidates."""
    w = _sample_weights(t.losses.shape[0], weights, params.N)
    row = _bound_row(t, [t_prime], params, w)
    return _terms_from_row(t, [t_prime], row, params)[0]


def pair_bounds_per_lambda(cands: list, params: BoundParams, weights=None) -> np.ndarray:
    """``(M, M, G)`` array of pair bounds before the final minimum over lambda."""
    if not cands:
        return np.zeros((0, 0, len(params.nu)))
    w = _sample_weights(cands[0].losses.shape[0], weights, params.N)
    return np.stack([_bound_row(t, cands, params, w)["per_lambda"] for t in cands])


def pair_inner(terms: PairBoundTerms, t: Candidate, t_prime: Candidate, params: BoundParams) -> float:
    """Re-evaluate the bracketed expression of a pair bound at its recorded argmin."""
    lam, gamma, gammap = terms.argmin_params
    N = params.N
    coef = 1.0 + t.beta / (gamma - t.beta) + t_prime.beta / (gammap - t_prime.beta)
    return (
        terms.r_diff
        + lam / (2.0 * N) * terms.v_term
        + (terms.d_t + terms.d_tprime + coef * terms.log_penalty) / lam
    )


def bound_matrix(cands: list, params: BoundParams, weights=None, jobs: int = 1):
    """All pair bounds ``B(t, t')`` over ordered candidates.

    Returns the ``M x M`` matrix and the matching table of
    :class:`PairBoundTerms`.
    """
    M = len(cands)
    if M == 0:
        return np.zeros((0, 0)), []
    w = _sample_weights(cands[0].losses.shape[0], weights, params.N)

    def work(t):
        row = _bound_row(t, cands, params, w)
        return row["bound"], _terms_from_row(t, cands, row, params)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            rows = list(ex.map(work, cands))
    else:
        rows = [work(t) for t in cands]
    return np.vstack([r[0] for r in rows]), [r[1] for r in rows]


def pair_bound_decomposed(
    t: Candidate, t_prime: Candidate, params: BoundParams, weights=None
) -> float:
    """Looser pair bound using the complexities ``C(t)``, ``C(t')`` only."""
    c_sum = t.complexity + t_prime.complexity
    if not np.isfinite(c_sum):
        return math.inf
    N, a, nu = params.N, params.a, params.nu
    w = _sample_weights(t.losses.shape[0], weights, N)
    diffs = t.losses - t_prime.losses
    r_diff = t.risk - t_prime.risk
    zeta = params.zeta
    best = math.inf
    for l, lam in enumerate(nu.grid):
        v = variance_v(diffs, a, lam, N, w)
        if math.isinf(v):
            continue
        pen = (zeta + 1) / (zeta - 1) * (LOG3 - math.log(params.epsilon) - nu.log_mass[l])
        inner = r_diff + lam / (2.0 * N) * v + (c_sum + pen) / lam
        if np.isfinite(inner):
            best = min(best, float(phi_inv(lam / N, inner)))
    return best


def symmetric_bound(t: Candidate, t_prime: Candidate, params: BoundParams, weights=None) -> float:
    """Upper bound on ``B(t,t') + B(t',t)`` using only variance and complexity terms."""
    c_sum = t.complexity + t_prime.complexity
    if not np.isfinite(c_sum):
        return math.inf
    N, a, nu = params.N, params.a, params.nu
    w = _sample_weights(t.losses.shape[0], weights, N)
    diffs = t.losses - t_prime.losses
    zeta = params.zeta
    best = math.inf
    for l, lam in enumerate(nu.grid):
        v_sym = 0.5 * (variance_v(diffs, a, lam, N, w) + variance_v(-diffs, a, lam, N, w))
        pen = (zeta + 1) / (zeta - 1) * (LOG3 - math.log(params.epsilon) - nu.log_mass[l])
        inner = lam / (2.0 * N) * v_sym + (c_sum + pen) / lam
        if np.isfinite(inner):
            best = min(best, 2.0 * float(phi_inv(lam / N, inner)))
    return best
