"""Datasets, loss families, submodel grids and the temperature grid nu."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import log_sum_exp

FAMILIES = ("zero-one", "hinge", "exponential", "least-squares", "lp", "negative-log-density")
_LABELLED = {"zero-one", "hinge", "exponential", "least-squares", "lp"}


class DataError(ValueError):
    """Malformed dataset input; ``row`` is the 1-based data row when known."""

    def __init__(self, message: str, row: Optional[int] = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


@dataclass(frozen=True)
class Dataset:
    """Observed sample ``Z_1..Z_N``: a feature matrix and optional labels."""

    x: np.ndarray
    y: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        object.__setattr__(self, "x", x)
        if x.shape[0] < 1:
            raise DataError("dataset must contain at least one sample")
        if self.y is not None:
            y = np.asarray(self.y, dtype=float).ravel()
            if y.shape[0] != x.shape[0]:
                raise DataError("labels and features differ in length")
            object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def arity(self) -> int:
        return self.x.shape[1]

    def concat(self, other: "Dataset") -> "Dataset":
        if (self.y is None) != (other.y is None):
            raise DataError("cannot concatenate labelled and unlabelled data")
        y = None if self.y is None else np.concatenate([self.y, other.y])
        return Dataset(np.vstack([self.x, other.x]), y)

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        """Read ``x0..xk[,y]`` columns with a header row (UTF-8, '.' decimals)."""
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise DataError("empty CSV file") from None
            xcols = [k for k, h in enumerate(header) if h.startswith("x")]
            if not xcols or [header[k] for k in xcols] != [f"x{j}" for j in range(len(xcols))]:
                raise DataError(f"header must be x0..xk[,y], got {header}")
            ycol = header.index("y") if "y" in header else None
            if len(header) != len(xcols) + (ycol is not None):
                raise DataError(f"unexpected columns in header {header}")
            xs, ys = [], []
            for row_no, row in enumerate(reader, start=1):
                if not row:
                    continue
                if len(row) != len(header):
                    raise DataError(f"expected {len(header)} fields, got {len(row)}", row_no)
                try:
                    vals = [float(v) for v in row]
                except ValueError:
                    raise DataError(f"non-numeric field in {row}", row_no) from None
                if not all(math.isfinite(v) for v in vals):
                    raise DataError(f"non-finite field in {row}", row_no)
                xs.append([vals[k] for k in xcols])
                if ycol is not None:
                    ys.append(vals[ycol])
        if not xs:
            raise DataError("CSV file has no data rows")
        return cls(np.array(xs), np.array(ys) if ycol is not None else None)


def gaussian_density(theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Unit-covariance Gaussian density with mean ``theta``, row-wise over ``x``."""
    x = np.atleast_2d(x)
    k = x.shape[1]
    sq = np.sum((x - theta) ** 2, axis=1)
    return np.exp(-0.5 * sq) / (2 * np.pi) ** (k / 2)


@dataclass(frozen=True)
class LossModel:
    """A loss family ``l_theta(z)`` for linear scores ``f_theta(x) = theta . x``.

    ``bound_C`` asserts losses lie in ``[0, C]``; ``expmoment = (b, B)``
    asserts ``E exp(b |l|) <= B``; ``clamp`` caps every loss. Unbounded
    families must declare exactly one of the three. The zero-one loss
    defaults to ``bound_C = 1``.
    """

    family: str
    bound_C: Optional[float] = None
    expmoment: Optional[tuple] = None
    clamp: Optional[float] = None
    p: float = 2.0
    density: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown loss family {self.family!r}; expected one of {FAMILIES}")
        if self.family == "zero-one" and self.bound_C is None and self.clamp is None and self.expmoment is None:
            object.__setattr__(self, "bound_C", 1.0)
        declared = sum(v is not None for v in (self.bound_C, self.expmoment, self.clamp))
        if declared != 1:
            raise ValueError(
                f"loss {self.family!r} must declare exactly one of bound_C, expmoment, clamp"
            )
        if self.bound_C is not None and self.bound_C < 0:
            raise ValueError("bound_C must be nonnegative")
        if self.expmoment is not None:
            b, B = self.expmoment
            if b <= 0 or B <= 0:
                raise ValueError("expmoment (b, B) must be positive")
            object.__setattr__(self, "expmoment", (float(b), float(B)))
        if self.family == "lp" and self.p < 1:
            raise ValueError("lp loss needs p >= 1")

    @property
    def needs_labels(self) -> bool:
        return self.family in _LABELLED

    @property
    def bound(self) -> Optional[float]:
        """Known upper bound on the loss (``bound_C`` or ``clamp``), if any."""
        return self.bound_C if self.bound_C is not None else self.clamp

    def losses(self, theta, x, y=None) -> np.ndarray:
        """Loss of ``theta`` on every row of ``x`` (labels ``y`` where required)."""
        theta = np.asarray(theta, dtype=float).ravel()
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != theta.shape[0]:
            raise ValueError(f"arity mismatch: theta has {theta.shape[0]} coords, samples have {x.shape[1]}")
        if self.needs_labels and y is None:
            raise ValueError(f"loss {self.family!r} requires labels")
        fam = self.family
        if fam == "negative-log-density":
            dens = self.density or gaussian_density
            q = np.asarray(dens(theta, x), dtype=float)
            if np.any(q < 0):
                raise ValueError("density returned a negative value")
            with np.errstate(divide="ignore"):
                out = -np.log(q)
            if self.clamp is None and np.any(np.isinf(out)):
                raise ValueError("zero model density at a sample point and no clamp configured")
        else:
            f = x @ theta
            y = np.asarray(y, dtype=float).ravel()
            if fam == "zero-one":
                out = (y * f <= 0).astype(float)
            elif fam == "hinge":
                out = np.maximum(1.0 - y * f, 0.0)
            elif fam == "exponential":
                out = np.exp(-y * f)
            elif fam == "least-squares":
                out = (y - f) ** 2
            else:
                out = np.abs(y - f) ** self.p
        if self.clamp is not None:
            out = np.minimum(out, self.clamp)
        if self.bound_C is not None and (np.any(out < 0) or np.any(out > self.bound_C)):
            raise ValueError(f"loss outside the declared range [0, {self.bound_C}]")
        return out


def evaluate_loss(loss: LossModel, theta, z) -> float:
    """Loss of ``theta`` at one sample ``z = (x, y)`` (or ``z = x`` when unlabelled)."""
    if isinstance(z, tuple):
        x, y = z
        y = None if y is None else [y]
    else:
        x, y = z, None
    return float(loss.losses(theta, np.atleast_2d(np.asarray(x, dtype=float)), y)[0])


def empirical_risk(loss: LossModel, theta, data: Dataset) -> float:
    return float(np.mean(loss.losses(theta, data.x, data.y)))


@dataclass(frozen=True)
class SubmodelGrid:
    """Finite discretisation of one submodel with its prior.

    ``prior_log_weights`` are normalised log-probabilities over ``atoms``;
    ``model_prior`` is the submodel's mass ``mu(i)``.
    """

    model_index: int
    atoms: np.ndarray
    prior_log_weights: np.ndarray
    model_prior: float

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        if atoms.shape[0] == 0:
            raise ValueError("a submodel grid needs at least one atom")
        lw = np.asarray(self.prior_log_weights, dtype=float).ravel()
        if lw.shape[0] != atoms.shape[0]:
            raise ValueError("one prior weight per atom is required")
        if abs(log_sum_exp(lw)) > 1e-10:
            raise ValueError("prior weights must sum to one")
        if not 0 <= self.model_prior <= 1:
            raise ValueError("model prior mu(i) must lie in [0, 1]")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "prior_log_weights", lw)

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    @classmethod
    def uniform(cls, model_index: int, atoms, model_prior: float) -> "SubmodelGrid":
        atoms = np.asarray(atoms, dtype=float)
        g = atoms.shape[0]
        return cls(model_index, atoms, np.full(g, -math.log(g)), model_prior)

    @classmethod
    def weighted(cls, model_index: int, atoms, weights, model_prior: float) -> "SubmodelGrid":
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("prior weights must be nonnegative with positive sum")
        with np.errstate(divide="ignore"):
            lw = np.log(w) - math.log(w.sum())
        return cls(model_index, atoms, lw, model_prior)

    @classmethod
    def lattice(cls, model_index: int, lo, hi, steps, model_prior: float) -> "SubmodelGrid":
        """Uniform prior on the Cartesian lattice ``linspace(lo, hi, steps)`` per coordinate."""
        lo, hi, steps = np.atleast_1d(lo), np.atleast_1d(hi), np.atleast_1d(steps)
        axes = [np.linspace(a, b, int(s)) for a, b, s in zip(lo, hi, steps)]
        mesh = np.meshgrid(*axes, indexing="ij")
        atoms = np.stack([m.ravel() for m in mesh], axis=1)
        return cls.uniform(model_index, atoms, model_prior)

    def loss_table(self, loss: LossModel, data: Dataset) -> np.ndarray:
        """Matrix of losses, one row per atom, one column per sample."""
        return np.vstack([loss.losses(theta, data.x, data.y) for theta in self.atoms])


def erm_argmin(loss: LossModel, grid: SubmodelGrid, data: Dataset) -> int:
    """Index of the empirical-risk minimiser on the grid (lowest index on ties)."""
    risks = grid.loss_table(loss, data).mean(axis=1)
    return int(np.argmin(risks))


@dataclass(frozen=True)
class ParameterGridNu:
    """Discrete prior ``nu`` over temperatures / scales, stored as log-masses."""

    grid: np.ndarray
    log_mass: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float).ravel()
        lm = np.asarray(self.log_mass, dtype=float).ravel()
        if grid.size == 0 or grid.shape != lm.shape:
            raise ValueError("nu needs a nonempty grid with one mass per point")
        if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
            raise ValueError("nu grid must be positive and strictly ascending")
        if abs(log_sum_exp(lm)) > 1e-10:
            raise ValueError("nu masses must sum to one")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "log_mass", lm)

    def __len__(self) -> int:
        return self.grid.size

    @classmethod
    def uniform(cls, grid: Sequence[float]) -> "ParameterGridNu":
        grid = np.asarray(grid, dtype=float)
        return cls(grid, np.full(grid.size, -math.log(grid.size)))

    @classmethod
    def dyadic(cls, n: int) -> "ParameterGridNu":
        """Uniform mass on ``{2^0, ..., 2^floor(log2 N)}``."""
        if n < 1:
            raise ValueError("N must be positive")
        top = int(math.floor(math.log(n) / math.log(2) + 1e-12))
        return cls.uniform([2.0**k for k in range(top + 1)])

    def extended(self, extra_points) -> "ParameterGridNu":
        """Same masses with additional zero-mass points (kept sorted)."""
        grid = np.concatenate([self.grid, np.asarray(extra_points, dtype=float)])
        lm = np.concatenate([self.log_mass, np.full(len(extra_points), -np.inf)])
        order = np.argsort(grid, kind="stable")
        return ParameterGridNu(grid[order], lm[order])
