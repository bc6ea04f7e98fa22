"""Finite-support synthetic worlds with exact risks, and Monte Carlo checks.

On a finite support every population quantity is an exact weighted sum, and
a dataset of size ``N`` is a multinomial vector of counts over the support.
Each probabilistic inequality becomes a Monte Carlo test whose left side is
known exactly. All Monte Carlo assertions use a 4 standard-error budget.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .bounds import (
    BoundParams,
    TruncationModel,
    pair_bounds_per_lambda,
    truncated_diff_mean,
)
from .core import bernstein_g, kl_divergence, log_sum_exp, phi_inv
from .gibbs import draw, draw_seed, gibbs_posterior, restrict
from .model import Dataset, LossModel, ParameterGridNu, SubmodelGrid
from .selection import build_candidates, run_selection

SE_BUDGET = 4.0


@dataclass(frozen=True)
class FiniteWorld:
    """Distribution with finite support over the sample space.

    Parameters are either row indices of ``table`` (an explicit loss table,
    one row per parameter) or parameter vectors evaluated with ``loss`` on
    ``support``.
    """

    probs: np.ndarray
    support: Optional[Dataset] = None
    loss: Optional[LossModel] = None
    table: Optional[np.ndarray] = None
    name: str = "world"
    seed: int = 0

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
            raise ValueError("probs must be a probability vector")
        object.__setattr__(self, "probs", p)
        if self.table is not None:
            t = np.asarray(self.table, dtype=float)
            if t.ndim != 2 or t.shape[1] != p.size:
                raise ValueError("table needs one column per support point")
            object.__setattr__(self, "table", t)
        if self.support is not None and self.support.n != p.size:
            raise ValueError("support and probs disagree in size")

    @property
    def K(self) -> int:
        return self.probs.size

    def loss_row(self, theta) -> np.ndarray:
        if self.table is not None and np.ndim(theta) == 0:
            return self.table[int(theta)]
        if self.loss is None or self.support is None:
            raise ValueError("parameter vectors need a support and a loss")
        return self.loss.losses(theta, self.support.x, self.support.y)

    def risk(self, theta) -> float:
        return float(self.loss_row(theta) @ self.probs)

    def risks(self, grid: SubmodelGrid) -> np.ndarray:
        return grid.loss_table(self.loss, self.support) @ self.probs

    def diff(self, theta, theta_prime) -> np.ndarray:
        return self.loss_row(theta) - self.loss_row(theta_prime)

    def sample_counts(self, N: int, rng: np.random.Generator, size=None) -> np.ndarray:
        return rng.multinomial(N, self.probs, size=size)

    def self_check(self, thetas, n_samples: int = 10**7, seed: Optional[int] = None) -> dict:
        """Compare exact risks with a Monte Carlo mean over ``n_samples`` draws."""
        rng = np.random.default_rng(self.seed if seed is None else seed)
        counts = self.sample_counts(n_samples, rng)
        z = []
        for theta in thetas:
            row = self.loss_row(theta)
            mc = counts @ row / n_samples
            var = counts @ (row - mc) ** 2 / (n_samples - 1)
            se = math.sqrt(var / n_samples)
            exact = float(row @ self.probs)
            z.append(0.0 if se == 0 and mc == exact else abs(mc - exact) / se if se > 0 else math.inf)
        return {"n_samples": n_samples, "max_z": max(z), "passed": max(z) <= SE_BUDGET}


SyntheticWorld = FiniteWorld


def three_point_world() -> FiniteWorld:
    """Two parameters whose loss difference takes the values -1, 0.5 and 6."""
    table = np.array([[0.0, 0.5, 6.0], [1.0, 0.0, 0.0]])
    return FiniteWorld(np.array([0.6, 0.3, 0.1]), table=table, name="three-point")


def bounded_world(C: float = 1.0) -> FiniteWorld:
    """Losses in ``[0, C]`` on three support points."""
    table = C * np.array([[0.0, 1.0, 0.5], [1.0, 0.0, 0.2], [0.3, 0.3, 0.3]])
    return FiniteWorld(np.array([0.5, 0.3, 0.2]), table=table, name="bounded")


def heavy_tail_world() -> FiniteWorld:
    """Loss values 0, 3 and 8 against a zero loss; ``E exp|l| <= 2`` for both."""
    table = np.array([[0.0, 3.0, 8.0], [0.0, 0.0, 0.0]])
    probs = np.array([1 - 0.03 - 1e-4, 0.03, 1e-4])
    return FiniteWorld(probs, table=table, name="heavy-tail")


HEAVY_TAIL_MOMENTS = (1.0, 2.0)


def threshold_world(n_points: int = 32, cut: float = 7 / 16, eta: float = 0.85) -> FiniteWorld:
    """Noisy threshold classification with features ``(x, 1)``.

    ``x`` is uniform on the cell midpoints of ``[0, 1]`` and
    ``P(y = 1 | x) = eta`` above ``cut``, ``1 - eta`` below.
    """
    xs = (np.arange(n_points) + 0.5) / n_points
    p_pos = np.where(xs > cut, eta, 1 - eta)
    x = np.concatenate([xs, xs])
    y = np.concatenate([np.ones(n_points), -np.ones(n_points)])
    probs = np.concatenate([p_pos, 1 - p_pos]) / n_points
    support = Dataset(np.c_[x, np.ones_like(x)], y)
    return FiniteWorld(probs, support=support, loss=LossModel("zero-one"), name="threshold")


def threshold_grids(levels: Sequence[int]) -> list:
    """Nested dyadic threshold grids ``{k / 2^l}`` with a uniform model prior."""
    mu = 1.0 / len(levels)
    return [
        SubmodelGrid.uniform(i, [[1.0, -k / 2**lv] for k in range(2**lv + 1)], mu)
        for i, lv in enumerate(levels)
    ]


def _mc_summary(values: np.ndarray) -> tuple:
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return mean, se


def true_truncated_gap(world: FiniteWorld, theta, theta_prime, lam: float, N: int) -> float:
    """Exact ``E[(l_theta - l_theta') ^ N/lambda]``."""
    d = world.diff(theta, theta_prime)
    return float(np.minimum(d, N / lam) @ world.probs)


def check_deviation_identity(
    world: FiniteWorld, theta, theta_prime, a: float, lam: float, N: int,
    replicates: int, seed: int,
) -> dict:
    """Monte Carlo mean of the exponential moment that equals one exactly.

    The exponent is ``lam Phi(R_{lam/a}) - (lam/N) sum Phi(d_i ^ aN/lam)``; it is
    assembled as a log before exponentiating, so a capped difference on the
    domain boundary gives a zero term instead of an overflow.
    """
    alpha = lam / N
    d = np.minimum(world.diff(theta, theta_prime), a * N / lam)
    R_trunc = true_truncated_gap(world, theta, theta_prime, lam / a, N)
    # lam * Phi(R) = -N log(1 - alpha R); (lam/N) Phi(x) = -log(1 - alpha x)
    with np.errstate(divide="ignore"):
        log_factor = np.log1p(-alpha * d)
    head = -N * math.log1p(-alpha * R_trunc)
    rng = np.random.default_rng(seed)
    counts = world.sample_counts(N, rng, size=replicates)
    hit = counts > 0
    with np.errstate(invalid="ignore"):
        tail = np.where(hit, counts * log_factor, 0.0).sum(axis=1)
    boundary = int(np.sum((hit & np.isneginf(log_factor)).any(axis=1)))
    vals = np.exp(head + tail)
    mean, se = _mc_summary(vals)
    return {
        "check": "deviation_identity", "a": a, "lambda": lam, "N": N,
        "replicates": replicates, "seed": seed, "mean": mean, "se": se,
        "boundary_hits": boundary, "passed": abs(mean - 1.0) <= SE_BUDGET * se + 1e-12,
    }


def check_bernstein_variant(
    world: FiniteWorld, theta, theta_prime, lam: Optional[float], which: str, N: int,
    C: float, replicates: int, seed: int,
) -> dict:
    """Monte Carlo mean of a Bernstein-type exponential moment (should be <= 1).

    ``which`` selects the upper deviation (``"upper"``), the lower deviation
    (``"lower"``) or the empirical-variance inequality (``"variance"``), whose scale
    is fixed at ``N / (4 C^2)`` so ``lam`` is ignored there.
    """
    d = world.diff(theta, theta_prime)
    if np.any(np.abs(d) > C + 1e-12):
        raise ValueError("loss differences exceed C")
    p = world.probs
    R_diff = float(d @ p)
    V = float(d**2 @ p)
    rng = np.random.default_rng(seed)
    counts = world.sample_counts(N, rng, size=replicates)
    r_diff = counts @ d / N
    if which in ("upper", "lower"):
        quad = lam**2 / (2 * N) * float(bernstein_g(2 * lam * C / N)) * V
        sign = 1.0 if which == "upper" else -1.0
        expo = sign * lam * (R_diff - r_diff) - quad
    elif which == "variance":
        lam = N / (4 * C**2)
        v = counts @ d**2 / N
        expo = N / (4 * C**2) * v - N / (2 * C**2) * V
    else:
        raise ValueError(f"unknown variant {which!r}")
    mean, se = _mc_summary(np.exp(expo))
    return {
        "check": f"bernstein_{which}", "lambda": lam, "N": N, "replicates": replicates,
        "seed": seed, "mean": mean, "se": se, "passed": mean <= 1.0 + SE_BUDGET * se + 1e-12,
    }


def check_legendre_duality(n, h, random_m_count: int, seed: int, tol: float = 1e-10) -> dict:
    """Variational formula ``log n(e^h) = max_m m(h) - KL(m, n)`` on a finite support."""
    n = np.asarray(n, dtype=float)
    h = np.asarray(h, dtype=float)
    live = n > 0
    lhs = log_sum_exp(h[live], weights=n[live])
    m_star = np.zeros_like(n)
    m_star[live] = np.exp(h[live] + np.log(n[live]) - lhs)
    rhs = float(m_star @ h) - kl_divergence(m_star, n)
    rng = np.random.default_rng(seed)
    worst = -math.inf
    for _ in range(random_m_count):
        m = np.zeros_like(n)
        m[live] = rng.dirichlet(np.ones(int(live.sum())))
        worst = max(worst, float(m @ h) - kl_divergence(m, n) - lhs)
    return {
        "check": "legendre_duality", "support": int(n.size), "lhs": lhs, "rhs": rhs,
        "gibbs": m_star.tolist(), "max_excess": worst,
        "passed": abs(lhs - rhs) <= tol and worst <= tol,
    }


def check_truncation_bound(world: FiniteWorld, theta, theta_prime, lam: float, N: int,
                           b: float, B: float) -> dict:
    """Exact truncation loss against ``(2B/b) exp(-bN/(2 lam))``."""
    d = world.diff(theta, theta_prime)
    moments = [float(np.exp(b * np.abs(world.loss_row(t))) @ world.probs) for t in (theta, theta_prime)]
    lhs = float(d @ world.probs) - true_truncated_gap(world, theta, theta_prime, lam, N)
    delta = 2 * B / b * math.exp(-b * N / (2 * lam))
    return {
        "check": "truncation_bound", "lambda": lam, "N": N, "lhs": lhs, "delta": delta,
        "moment_condition": max(moments) <= B, "passed": lhs <= delta,
    }


@dataclass(frozen=True)
class CoverageConfig:
    """Fixed ingredients of one coverage experiment on a finite world."""

    world: FiniteWorld
    grids: tuple
    N: int
    epsilon: float
    a: float = 1.0
    zeta: float = 2.0
    q: float = 1.0
    lam: float = 16.0
    pair: tuple = ((0, 2), (1, 3))

    @property
    def params(self) -> BoundParams:
        return BoundParams(self.a, self.epsilon, self.zeta, ParameterGridNu.dyadic(self.N), self.N)


def _log_ratio_to_prior(rho, atom: int) -> float:
    return float(rho.log_weights[atom] - rho.base.grid.prior_log_weights[atom])


def _coverage_basic(cfg: CoverageConfig, counts: np.ndarray, seed: int, rep: int) -> bool:
    world, N = cfg.world, cfg.N
    betas = ParameterGridNu.dyadic(N).grid
    drawn = []
    for i, b in cfg.pair:
        grid = cfg.grids[i]
        table = grid.loss_table(world.loss, world.support)
        post = gibbs_posterior(grid, table @ counts / N, float(betas[b]))
        rho = restrict(post, cfg.q)
        atom = draw(rho, draw_seed(seed, i, b, rep))
        drawn.append((table[atom], _log_ratio_to_prior(rho, atom)))
    (l1, lr1), (l2, lr2) = drawn
    d = l1 - l2
    lam = cfg.lam
    left = float(np.minimum(d, cfg.a * N / lam) @ world.probs)
    inner = truncated_diff_mean(d, cfg.a * N / lam, lam / N, counts)
    inner += (lr1 + lr2 + math.log(1 / cfg.epsilon)) / lam
    right = float(phi_inv(lam / N, inner)) if np.isfinite(inner) else math.inf
    return left > right


def _coverage_pairs(cfg: CoverageConfig, counts: np.ndarray, seed: int, rep: int) -> bool:
    world, params, N = cfg.world, cfg.params, cfg.N
    trunc = TruncationModel.from_loss(world.loss)
    cands = build_candidates(world.support, cfg.grids, world.loss, params, cfg.q, seed,
                             replicate=rep, truncation=trunc, weights=counts)
    bounds = pair_bounds_per_lambda(cands, params, counts)
    L = np.vstack([c.losses for c in cands])
    diffs = L[:, None, :] - L[None, :, :]
    caps = cfg.a * N / params.nu.grid
    left = np.minimum(diffs[:, :, None, :], caps[None, None, :, None]) @ world.probs
    return bool(np.any(left > bounds))


def _coverage_replicate(args) -> bool:
    cfg, theorem, seed, rep = args
    rng = np.random.default_rng(np.random.SeedSequence([seed, rep, 0xC0]))
    counts = cfg.world.sample_counts(cfg.N, rng)
    if theorem == "single_pair":
        return _coverage_basic(cfg, counts, seed, rep)
    if theorem == "all_pairs":
        return _coverage_pairs(cfg, counts, seed, rep)
    raise ValueError(f"unknown theorem {theorem!r}")


def _map(fn, tasks: list, jobs: int) -> list:
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(jobs) as ex:
            return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    return [fn(t) for t in tasks]


def coverage(cfg: CoverageConfig, theorem: str, replicates: int, seed: int, jobs: int = 1) -> dict:
    """Violation rate of a high-probability bound over fresh datasets and draws.

    ``theorem`` is ``"single_pair"`` (one pair of randomized estimators at a
    fixed scale) or ``"all_pairs"`` (every candidate pair and every scale of
    the grid simultaneously).
    """
    tasks = [(cfg, theorem, seed, r) for r in range(replicates)]
    flags = _map(_coverage_replicate, tasks, jobs)
    rate = sum(flags) / replicates
    se = math.sqrt(cfg.epsilon * (1 - cfg.epsilon) / replicates)
    return {
        "check": f"coverage_{theorem}", "epsilon": cfg.epsilon, "N": cfg.N,
        "replicates": replicates, "seed": seed, "violations": int(sum(flags)),
        "rate": rate, "binomial_se": se, "passed": rate <= cfg.epsilon + SE_BUDGET * se,
    }


@dataclass(frozen=True)
class MarginFit:
    kappa: float
    c: Optional[float]
    x_grid: tuple
    phi: tuple
    envelope_ok: Optional[bool]


def margin_fit(world: FiniteWorld, atoms, kappa: float, x_grid) -> MarginFit:
    """Smallest ``c`` with ``V^kappa <= c R'`` on ``atoms``, and the margin function on ``x_grid``."""
    if kappa < 1:
        raise ValueError("kappa must be >= 1")
    rows = np.vstack([world.loss_row(t) for t in atoms])
    R = rows @ world.probs
    best = int(np.argmin(R))
    Rp = R - R[best]
    V = (rows - rows[best]) ** 2 @ world.probs
    x_grid = np.asarray(x_grid, dtype=float)
    phis = np.max(V[None, :] - x_grid[:, None] * Rp[None, :], axis=1)
    pos = Rp > 0
    if np.any((~pos) & (V > 0)):
        c = None
    else:
        c = float(np.max(V[pos] ** kappa / Rp[pos])) if pos.any() else 0.0
    envelope = None
    if c is not None and c > 0:
        if kappa == 1:
            envelope = bool(np.max(V - c * Rp) <= 1e-12)
        else:
            env = (1 - 1 / kappa) * (kappa * c * x_grid) ** (-1 / (kappa - 1))
            envelope = bool(np.all(phis <= env + 1e-12))
    return MarginFit(kappa, c, tuple(x_grid.tolist()), tuple(phis.tolist()), envelope)


def dimension_estimate(risks, prior_log_weights, xi_grid) -> float:
    """``max_xi xi * (mean of R under prior * exp(-xi R) - min R)``."""
    R = np.asarray(risks, dtype=float)
    lw = np.asarray(prior_log_weights, dtype=float)
    gap = R - R.min()
    best = 0.0
    for xi in np.asarray(xi_grid, dtype=float):
        logw = lw - xi * gap
        w = np.exp(logw - log_sum_exp(logw))
        best = max(best, float(xi * (w @ gap)))
    return best


def world_dimension(world: FiniteWorld, grid: SubmodelGrid, xi_grid) -> float:
    return dimension_estimate(world.risks(grid), grid.prior_log_weights, xi_grid)


def delta_rate(excess_i: float, d_i: float, N: int, mu_i: float, q: float,
               epsilon: float, kappa: float) -> float:
    """Convergence rate of submodel ``i``; ``excess_i`` is ``R(best in i) - R(best overall)``."""
    if excess_i < 0:
        raise ValueError("excess_i must be nonnegative")
    comp = d_i + math.log(1 / q) + math.log((1 + math.log2(N)) / (epsilon * mu_i))
    first = math.sqrt(excess_i ** (1 / kappa) * comp / N)
    second = (comp / N) ** (kappa / (2 * kappa - 1))
    return max(first, second)


@dataclass(frozen=True)
class AssumptionEstimates:
    kappa: float
    c: Optional[float]
    d_i: tuple
    delta_N: tuple


def assumption_estimates(world: FiniteWorld, grids, N: int, q: float, epsilon: float,
                         kappa: float = 1.0, xi_grid=None) -> AssumptionEstimates:
    if xi_grid is None:
        xi_grid = np.geomspace(1e-2, 1e4, 400)
    all_atoms = [a for g in grids for a in g.atoms]
    fit = margin_fit(world, all_atoms, kappa, [1.0])
    R_best = min(float(world.risks(g).min()) for g in grids)
    d, rates = [], []
    for g in grids:
        di = world_dimension(world, g, xi_grid)
        d.append(di)
        rates.append(delta_rate(float(world.risks(g).min()) - R_best, di, N, g.model_prior, q, epsilon, kappa))
    return AssumptionEstimates(kappa, fit.c, tuple(d), tuple(rates))


@dataclass(frozen=True)
class RateConfig:
    world: FiniteWorld
    grids: tuple
    epsilon: float = 0.1
    a: float = 1.0
    zeta: float = 2.0
    q: float = 1.0


def _rate_replicate(args) -> float:
    cfg, N, seed, rep = args
    rng = np.random.default_rng(np.random.SeedSequence([seed, rep, N]))
    counts = cfg.world.sample_counts(N, rng)
    params = BoundParams(cfg.a, cfg.epsilon, cfg.zeta, ParameterGridNu.dyadic(N), N)
    rep_ = run_selection(cfg.world.support, cfg.grids, cfg.world.loss, params, cfg.q, seed,
                         replicate=rep, weights=counts)
    sel = rep_.selected
    if sel is None:
        return math.nan
    R_best = min(float(cfg.world.risks(g).min()) for g in cfg.grids)
    return cfg.world.risk(sel.posterior.grid.atoms[sel.atom]) - R_best


def rate_experiment(cfg: RateConfig, Ns: Sequence[int], replicates: int, seed: int,
                    jobs: int = 1) -> dict:
    """Excess true risk of the selected estimator across sample sizes."""
    out = {"Ns": list(Ns), "replicates": replicates, "seed": seed, "median": [], "mean": [], "excess": []}
    for N in Ns:
        ex = np.array(_map(_rate_replicate, [(cfg, N, seed, r) for r in range(replicates)], jobs))
        out["excess"].append(ex.tolist())
        out["median"].append(float(np.median(ex)))
        out["mean"].append(float(np.mean(ex)))
    med = out["median"]
    out["nonincreasing"] = all(m2 <= m1 for m1, m2 in zip(med, med[1:]))
    out["halved"] = med[-1] <= 0.5 * med[0]
    out["passed"] = out["nonincreasing"] and out["halved"]
    return out
