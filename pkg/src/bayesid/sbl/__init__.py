"""Sparse Bayesian learning: priors, posterior updates and the
identification loop."""

from .identify import (AllRepeatsDivergedError, ArchitectureSpec, CycleRecord, DivergenceError,
                       IdentificationConfig, IdentificationReport, RepeatRecord,
                       pruned_regressors, run_identification, run_repeat,
                       sequences_from_regression)
from .priors import (OMEGA_FLOOR, PSI_CAP, MatrixPrior, PosteriorState, PriorGrouping,
                     alpha_from_hessian, as_grouping, cccp_gap, combined_prior_width,
                     default_groupings, penalty, penalty_grad, posterior_variance, prune,
                     regularised_grad, regularised_loss, solve_psi_scalar, sparse_group_lasso,
                     update_alpha, update_omega_psi)

__all__ = [
    "AllRepeatsDivergedError", "ArchitectureSpec", "CycleRecord", "DivergenceError",
    "IdentificationConfig", "IdentificationReport", "RepeatRecord", "pruned_regressors",
    "run_identification", "run_repeat", "sequences_from_regression",
    "OMEGA_FLOOR", "PSI_CAP", "MatrixPrior", "PosteriorState", "PriorGrouping",
    "alpha_from_hessian", "as_grouping", "cccp_gap", "combined_prior_width",
    "default_groupings", "penalty", "penalty_grad", "posterior_variance", "prune",
    "regularised_grad", "regularised_loss", "solve_psi_scalar", "sparse_group_lasso",
    "update_alpha", "update_omega_psi",
]
