"""Scalar primitives shared by every bound.

Extended reals are plain floats: ``+inf`` marks a vacuous quantity and is
propagated, never dropped. ``-inf`` is only ever used for log-weights of
zero-mass atoms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp as _scipy_logsumexp

# below this |x| the closed form of g loses digits to cancellation
_G_SERIES_SWITCH = 1e-4


def phi(alpha, t):
    """Change of variable ``-log(1 - alpha t) / alpha``.

    Defined on ``t < 1/alpha``; at or beyond the boundary the limit
    ``+inf`` is returned instead of raising. Works elementwise on arrays.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    t = np.asarray(t, dtype=float)
    at = alpha * t
    inside = at < 1.0
    # evaluate log1p only inside the domain; the boundary branch is +inf
    out = np.where(inside, -np.log1p(-np.where(inside, at, 0.0)) / alpha, np.inf)
    return out[()] if out.ndim == 0 else out


def phi_inv(alpha, u):
    """Inverse of :func:`phi`: ``(1 - exp(-alpha u)) / alpha``.

    ``u = +inf`` maps to ``1/alpha``, the supremum of the range.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    u = np.asarray(u, dtype=float)
    with np.errstate(over="ignore"):
        out = -np.expm1(-alpha * u) / alpha
    return out[()] if out.ndim == 0 else out


def bernstein_g(x):
    """Modified Bernstein function ``2(e^x - 1 - x) / x^2`` with ``g(0) = 1``."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < _G_SERIES_SWITCH
    xs = np.where(small, x, 0.0)
    series = 1.0 + xs / 3.0 + xs**2 / 12.0 + xs**3 / 60.0
    xl = np.where(small, 1.0, x)
    with np.errstate(over="ignore"):
        closed = 2.0 * (np.expm1(xl) - xl) / xl**2
    out = np.where(small, series, closed)
    return out[()] if out.ndim == 0 else out


def log_sum_exp(log_terms, weights=None) -> float:
    """Stable ``log sum exp(log_terms)`` (optionally ``log sum w exp``)."""
    log_terms = np.asarray(log_terms, dtype=float)
    if log_terms.size == 0:
        raise ValueError("log_sum_exp of an empty list")
    if log_terms.size == 1 and weights is None:
        return float(log_terms.ravel()[0])
    if np.any(log_terms == np.inf):
        return np.inf
    return float(_scipy_logsumexp(log_terms, b=weights))


def kl_divergence(m, n) -> float:
    """KL divergence of finite distribution ``m`` from ``n``; ``+inf`` unless m << n."""
    m = np.asarray(m, dtype=float)
    n = np.asarray(n, dtype=float)
    if m.shape != n.shape:
        raise ValueError("m and n must share a support")
    pos = m > 0
    if np.any(n[pos] <= 0):
        return np.inf
    return float(np.sum(m[pos] * (np.log(m[pos]) - np.log(n[pos]))))


@dataclass(frozen=True)
class CappedMean:
    """Mean of ``min(v_i, cap)`` over a finite sample."""

    cap: float
    values: tuple
    mean_capped: float

    @classmethod
    def from_values(cls, values, cap: float, weights=None) -> "CappedMean":
        v = np.asarray(values, dtype=float)
        return cls(cap, tuple(v.tolist()), capped_mean(v, cap, weights))


def capped_mean(values, cap: float, weights=None) -> float:
    v = np.minimum(np.asarray(values, dtype=float), cap)
    if weights is None:
        return float(np.mean(v))
    weights = np.asarray(weights, dtype=float)
    return float(np.dot(weights, v) / weights.sum())


def is_vacuous(x) -> bool:
    return bool(np.isposinf(x))
