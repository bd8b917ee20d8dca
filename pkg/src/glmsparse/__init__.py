"""Importance-sampling sparsifiers for generalized linear model objectives."""
__version__ = "0.1.0"

from .leverage import LeverageEstimator, exact_leverage, mod_lev_approx, spectral_check
from .losses import ProperLossFamily, find_anchor, make_modified, verify_properness
from .matrix_io import RowMatrix, load_matrix, load_response, save_matrix, save_response
from .mlso import (OverestimateVector, WeightScheme, is_approx_weight, metric_d, qmlso,
                   update_phi, weight_initialize)
from .oracles import MatrixOracle, NoiseConfig, QueryLedger, quantum_budget
from .regressors import RegressionProblem, SolveReport, embed, reference_solve, solve
from .sparsifier import (Sparsifier, SparsifyConfig, multi_sample, qglm_sparsify, sum_estimate,
                         validate_sparsifier)

__all__ = [
    "LeverageEstimator", "MatrixOracle", "NoiseConfig", "OverestimateVector", "ProperLossFamily",
    "QueryLedger", "RegressionProblem", "RowMatrix", "SolveReport", "Sparsifier", "SparsifyConfig",
    "WeightScheme", "embed", "exact_leverage", "find_anchor", "is_approx_weight", "load_matrix",
    "load_response", "make_modified", "metric_d", "mod_lev_approx", "multi_sample", "qglm_sparsify",
    "qmlso", "quantum_budget", "reference_solve", "save_matrix", "save_response", "solve",
    "spectral_check", "sum_estimate", "update_phi", "validate_sparsifier", "verify_properness",
    "weight_initialize",
]
