"""Relative PAC-Bayesian bounds and complexity-ordered model selection on finite grids."""
from .core import bernstein_g, kl_divergence, log_sum_exp, phi, phi_inv
from .model import Dataset, DataError, LossModel, ParameterGridNu, SubmodelGrid
from .gibbs import draw, draw_seed, gibbs_posterior, restrict
from .bounds import (
    BoundParams,
    PairBoundTerms,
    TruncationModel,
    complexity_C,
    delta_correction,
    localized_BK,
    localized_D,
    pair_bound_B,
    pair_bound_decomposed,
    truncated_diff_mean,
    variance_v,
)
from .selection import SelectionReport, run_selection, subadditive_closure

__version__ = "0.1.0"

__all__ = [
    "BoundParams", "DataError", "Dataset", "LossModel", "PairBoundTerms", "ParameterGridNu",
    "SelectionReport", "SubmodelGrid", "TruncationModel", "bernstein_g", "complexity_C",
    "delta_correction", "draw", "draw_seed", "gibbs_posterior", "kl_divergence", "localized_BK",
    "localized_D", "log_sum_exp", "pair_bound_B", "pair_bound_decomposed", "phi", "phi_inv",
    "restrict", "run_selection", "subadditive_closure", "truncated_diff_mean", "variance_v",
]
