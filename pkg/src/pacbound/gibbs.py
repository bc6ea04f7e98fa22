"""Gibbs posteriors on finite grids, their level-set restrictions and seeded draws."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import log_sum_exp
from .model import SubmodelGrid

# slack when comparing a cumulative mass against q (q = 1 must select the full support)
_MASS_TOL = 1e-12


@dataclass(frozen=True)
class GibbsPosterior:
    """``pi_exp(-beta r)`` over a grid, carried as normalised log-weights."""

    grid: SubmodelGrid
    beta: float
    risks: np.ndarray
    log_weights: np.ndarray
    log_partition: float

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def to_dict(self) -> dict:
        return {
            "model_index": self.grid.model_index,
            "beta": self.beta,
            "log_weights": self.log_weights.tolist(),
            "log_partition": self.log_partition,
        }


@dataclass(frozen=True)
class RestrictedPosterior:
    """Gibbs posterior conditioned on the level set ``{r - min r <= p_level}``.

    Its density with respect to ``base`` is ``exp(-log_renorm)`` on the
    support and zero elsewhere; ``log_renorm`` is the log Gibbs mass of
    the support.
    """

    base: GibbsPosterior
    q: float
    p_level: float
    support_mask: np.ndarray
    log_renorm: float

    @property
    def log_weights(self) -> np.ndarray:
        return np.where(self.support_mask, self.base.log_weights - self.log_renorm, -np.inf)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def log_density_ratio(self, atom: int) -> float:
        """``log d rho / d pi_exp(-beta r)`` at an atom (``-inf`` off the support)."""
        return -self.log_renorm if self.support_mask[atom] else -np.inf

    def to_dict(self) -> dict:
        return {
            "q": self.q,
            "p_level": self.p_level,
            "support": [int(k) for k in np.flatnonzero(self.support_mask)],
            "log_renorm": self.log_renorm,
        }


def gibbs_posterior(grid: SubmodelGrid, risks, beta: float) -> GibbsPosterior:
    risks = np.asarray(risks, dtype=float).ravel()
    if risks.shape[0] != grid.size:
        raise ValueError("one risk per grid atom is required")
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if np.any(np.isnan(risks)) or np.any(risks == -np.inf):
        raise ValueError("risks must be finite or +inf")
    finite = np.isfinite(risks) & np.isfinite(grid.prior_log_weights)
    if not finite.any():
        raise ValueError("every atom has infinite risk or zero prior mass")
    unnorm = np.full(grid.size, -np.inf)
    if beta == 0:
        unnorm[finite] = grid.prior_log_weights[finite]
    else:
        unnorm[finite] = grid.prior_log_weights[finite] - beta * risks[finite]
    log_z = log_sum_exp(unnorm[finite])
    return GibbsPosterior(grid, float(beta), risks, unnorm - log_z, float(log_z))


def level_quantile(post: GibbsPosterior, q: float) -> float:
    """Smallest risk gap ``p`` whose level set carries Gibbs mass at least ``q``."""
    if not 0 < q <= 1:
        raise ValueError("q must lie in (0, 1]")
    live = np.isfinite(post.log_weights)
    gaps = post.risks - post.risks[live].min()
    levels = np.unique(gaps[live])
    order = np.argsort(gaps[live], kind="stable")
    sorted_gaps = gaps[live][order]
    cum = np.cumsum(np.exp(post.log_weights[live][order]))
    # total mass of each level set {gap <= p}: last cumulative index with gap <= p
    ends = np.searchsorted(sorted_gaps, levels, side="right") - 1
    mass = cum[ends] / cum[-1]
    ok = np.flatnonzero(mass >= q - _MASS_TOL)
    return float(levels[ok[0]])


def restrict(post: GibbsPosterior, q: float) -> RestrictedPosterior:
    p = level_quantile(post, q)
    live = np.isfinite(post.log_weights)
    gaps = post.risks - post.risks[live].min()
    mask = live & (gaps <= p)
    # the full live support keeps the base posterior exactly
    log_renorm = 0.0 if (mask == live).all() else log_sum_exp(post.log_weights[mask])
    return RestrictedPosterior(post, float(q), p, mask, float(log_renorm))


def draw_seed(experiment_seed: int, model_index: int, beta_index: int, replicate: int = 0) -> int:
    """Derive the draw seed for candidate ``(i, beta)`` from the experiment seed."""
    ss = np.random.SeedSequence([int(experiment_seed), int(replicate), int(model_index), int(beta_index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def draw(post: RestrictedPosterior, rng_seed: int) -> int:
    """Draw one atom index from the restricted posterior, deterministically in ``rng_seed``."""
    rng = np.random.Generator(np.random.Philox(key=int(rng_seed) % 2**64))
    w = post.weights
    cdf = np.cumsum(w)
    u = rng.random() * cdf[-1]
    idx = int(np.searchsorted(cdf, u, side="right"))
    support = np.flatnonzero(post.support_mask)
    # guard against landing on a zero-weight index through rounding at the top end
    if idx >= w.size or not post.support_mask[idx]:
        idx = int(support[min(np.searchsorted(support, idx), support.size - 1)])
    return idx
