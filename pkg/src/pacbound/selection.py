"""Complexity-ordered model selection from pairwise relative-risk bounds."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bounds import (
    BoundParams,
    Candidate,
    TruncationModel,
    bound_matrix,
    complexity_C,
    d_over_nu,
)
from .gibbs import draw, draw_seed, gibbs_posterior, restrict
from .model import Dataset, LossModel, SubmodelGrid


def _min_plus(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    # (A (x) B)[x, z] = min_y A[x, y] + B[y, z]
    with np.errstate(invalid="ignore"):
        s = A[:, :, None] + B[None, :, :]
    s = np.where(np.isnan(s), np.inf, s)
    return s.min(axis=1)


def _closure_steps(B: np.ndarray, steps: int) -> np.ndarray:
    D = B.copy()
    for _ in range(steps - 1):
        D = np.minimum(D, _min_plus(D, B))
    return D


def subadditive_closure(B) -> tuple:
    """Minimum over chains of at least one edge of summed ``B`` entries.

    Returns ``(B_tilde, negative_cycle)``. Chains are extended one edge at a
    time on the right, so every entry is a left-to-right sum along its best
    chain. Without negative cycles, chains of at most ``M`` edges suffice
    (a diagonal entry may need a cycle through every candidate). When a
    longer chain still improves, a negative cycle exists: the flag is set and
    the result is restricted to chains of at most ``M - 1`` edges.
    """
    B = np.asarray(B, dtype=float)
    M = B.shape[0]
    if B.ndim != 2 or B.shape != (M, M) or M < 1:
        raise ValueError("B must be a nonempty square matrix")
    D_M = _closure_steps(B, M)
    D_next = np.minimum(D_M, _min_plus(D_M, B))
    finite = np.isfinite(D_M)
    scale = 1e-12 * (1.0 + np.abs(np.where(finite, D_M, 0.0)))
    improved = np.where(finite, D_next < D_M - scale, D_next < D_M)
    if improved.any():
        return _closure_steps(B, max(M - 1, 1)), True
    return D_M, False


def rank_s(B_tilde) -> list:
    """1-based index of the first positive entry in each row; ``M + 1`` when none is."""
    B_tilde = np.asarray(B_tilde, dtype=float)
    M = B_tilde.shape[0]
    out = []
    for row in B_tilde:
        pos = np.flatnonzero(row > 0)
        out.append(int(pos[0]) + 1 if pos.size else M + 1)
    return out


def select(s: Sequence[int]) -> tuple:
    """``(k_hat, s_hat)``: least 1-based index attaining ``max s``, and that maximum."""
    if len(s) == 0:
        raise ValueError("s must be nonempty")
    s_hat = max(s)
    return list(s).index(s_hat) + 1, s_hat


@dataclass(frozen=True)
class Certificate:
    j: int
    case: int
    slack: float
    coarse_slack: float

    def to_dict(self) -> dict:
        return {"j": self.j, "case": self.case, "slack": self.slack, "coarse_slack": self.coarse_slack}


def certificate(B, B_tilde, s: Sequence[int], j: int) -> Certificate:
    """Slack bounding ``R(theta_hat) - R(theta_j)`` for the 1-based candidate ``j``.

    ``slack`` uses the closed matrix; ``coarse_slack`` replaces every closed
    entry by the direct bound ``B``.
    """
    B = np.asarray(B, dtype=float)
    Bt = np.asarray(B_tilde, dtype=float)
    M = Bt.shape[0]
    k_hat, s_hat = select(s)
    s_max = max(s)
    kh = k_hat - 1
    if j < s_hat:
        return Certificate(j, 1, 0.0, 0.0)
    if j < k_hat:
        sj = s[j - 1]
        if sj > M:
            # row j has no positive entry, which contradicts j < k_hat
            return Certificate(j, 2, math.inf, math.inf)
        return Certificate(j, 2, float(Bt[sj - 1, j - 1]), float(B[sj - 1, j - 1]))
    if s[j - 1] == s_max:
        if s_hat > M:
            return Certificate(j, 3, math.inf, math.inf)
        sh = s_hat - 1
        return Certificate(
            j, 3,
            float(Bt[kh, sh] + Bt[sh, j - 1]),
            float(B[kh, sh] + B[sh, j - 1]),
        )
    return Certificate(j, 4, float(Bt[kh, j - 1]), float(B[kh, j - 1]))


@dataclass
class CandidateOrder:
    candidates: list
    excluded: list

    @property
    def M(self) -> int:
        return len(self.candidates)

    @classmethod
    def from_candidates(cls, cands: Sequence[Candidate]) -> "CandidateOrder":
        usable = [c for c in cands if np.isfinite(c.complexity)]
        excluded = [c for c in cands if not np.isfinite(c.complexity)]
        usable.sort(key=lambda c: (c.complexity, c.model_index, c.beta_index))
        return cls(usable, excluded)


def jsonable(x):
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "+inf" if x > 0 else "-inf"
        return x
    if isinstance(x, (np.floating, np.integer)):
        return jsonable(x.item())
    if isinstance(x, np.ndarray):
        return jsonable(x.tolist())
    if isinstance(x, dict):
        return {k: jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    return x


@dataclass
class SelectionReport:
    order: CandidateOrder
    B: np.ndarray
    B_tilde: np.ndarray
    s: list
    k_hat: Optional[int]
    s_hat: Optional[int]
    certificates: list
    negative_cycle: bool
    terms: list = field(default_factory=list, repr=False)
    symmetric_violations: list = field(default_factory=list)

    @property
    def M(self) -> int:
        return self.order.M

    @property
    def selected(self) -> Optional[Candidate]:
        if self.k_hat is None:
            return None
        return self.order.candidates[self.k_hat - 1]

    @property
    def t_hat(self) -> Optional[tuple]:
        c = self.selected
        return None if c is None else c.key

    @property
    def theta_hat(self) -> Optional[int]:
        c = self.selected
        return None if c is None else c.atom

    @property
    def vacuous(self) -> bool:
        return self.M == 0 or not np.isfinite(self.B).any()

    def to_dict(self) -> dict:
        sel = self.selected
        out = {
            "M": self.M,
            "candidates": [
                {
                    "model_index": c.model_index,
                    "beta_index": c.beta_index,
                    "beta": c.beta,
                    "atom": c.atom,
                    "empirical_risk": c.risk,
                    "complexity": c.complexity,
                    "gamma_argmin": None if c.gamma_index is None else c.gamma_index,
                }
                for c in self.order.candidates
            ],
            "excluded": [list(c.key) for c in self.order.excluded],
            "B": self.B,
            "B_tilde": self.B_tilde,
            "pair_terms": [[t.to_dict() for t in row] for row in self.terms],
            "s": self.s,
            "k_hat": self.k_hat,
            "s_hat": self.s_hat,
            "t_hat": None if sel is None else list(sel.key),
            "theta_hat": None if sel is None else sel.atom,
            "theta_hat_params": None if sel is None or sel.posterior is None
            else sel.posterior.grid.atoms[sel.atom].tolist(),
            "certificates": [c.to_dict() for c in self.certificates],
            "negative_cycle": self.negative_cycle,
            "symmetric_violations": self.symmetric_violations,
        }
        return jsonable(out)


def report_from_matrix(order: CandidateOrder, B: np.ndarray, terms=()) -> SelectionReport:
    """Closure, ranks, selection and certificates for an ordered bound matrix."""
    M = order.M
    if M == 0:
        return SelectionReport(order, np.zeros((0, 0)), np.zeros((0, 0)), [], None, None, [], False, list(terms))
    B_tilde, neg = subadditive_closure(B)
    sym = B + B.T
    violations = [[i + 1, j + 1] for i in range(M) for j in range(i, M) if sym[i, j] < 0]
    if neg:
        return SelectionReport(order, B, B_tilde, [], None, None, [], True, list(terms), violations)
    s = rank_s(B_tilde)
    k_hat, s_hat = select(s)
    certs = [certificate(B, B_tilde, s, j) for j in range(1, M + 1)]
    return SelectionReport(order, B, B_tilde, s, k_hat, s_hat, certs, False, list(terms), violations)


def build_candidates(
    data: Dataset,
    grids: Sequence[SubmodelGrid],
    loss: LossModel,
    params: BoundParams,
    q: float,
    seed: int,
    replicate: int = 0,
    truncation: Optional[TruncationModel] = None,
    weights=None,
    jobs: int = 1,
) -> list:
    """Posterior, restriction, draw, D row and complexity for every ``(i, beta)``.

    ``weights`` are optional multiplicities of the rows of ``data``.
    """
    if truncation is None:
        truncation = TruncationModel.from_loss(loss)
    w = np.ones(data.n) if weights is None else np.asarray(weights, dtype=float)
    total = w.sum()
    nu = params.nu
    betas = [b for b in range(len(nu)) if np.isfinite(nu.log_mass[b])]
    tasks = []
    for i, grid in enumerate(grids):
        table = grid.loss_table(loss, data)
        risks = table @ w / total
        # draws are keyed by the rank of beta within supp(nu), so zero-mass
        # grid points never shift them
        for rank, b in enumerate(betas):
            tasks.append((i, grid, table, risks, b, rank))

    def work(task):
        i, grid, table, risks, b, rank = task
        beta = float(nu.grid[b])
        post = gibbs_posterior(grid, risks, beta)
        rho = restrict(post, q)
        atom = draw(rho, draw_seed(seed, i, rank, replicate))
        log_mu = math.log(grid.model_prior) if grid.model_prior > 0 else -math.inf
        d_row = d_over_nu(post, rho, atom, params, table, weights, truncation)
        c = Candidate(i, b, beta, atom, table[atom], float(risks[atom]), d_row,
                      log_mu, float(nu.log_mass[b]), post, rho)
        c.complexity, c.gamma_index = complexity_C(b, d_row, log_mu, params)
        return c

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            return list(ex.map(work, tasks))
    return [work(t) for t in tasks]


def run_selection(
    data: Dataset,
    grids: Sequence[SubmodelGrid],
    loss: LossModel,
    params: BoundParams,
    q: float = 1.0,
    seed: int = 0,
    replicate: int = 0,
    truncation: Optional[TruncationModel] = None,
    weights=None,
    jobs: int = 1,
) -> SelectionReport:
    """End-to-end selection on one dataset."""
    cands = build_candidates(data, grids, loss, params, q, seed, replicate, truncation, weights, jobs)
    order = CandidateOrder.from_candidates(cands)
    B, terms = bound_matrix(order.candidates, params, weights, jobs)
    return report_from_matrix(order, B, terms)
