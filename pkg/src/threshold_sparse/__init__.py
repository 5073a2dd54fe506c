"""Two-step penalized M-estimation for sparse regression with an unknown
structural change point in the sparsity pattern.

The estimator profiles a weighted-l1 problem over a threshold grid, refits
with one-step SCAD weights at the selected threshold, then re-estimates the
threshold at the refitted coefficients. Quantile and logistic losses are
built in, together with a Monte Carlo harness for the reference designs.
"""

from .data import (ActiveSet, CoefficientPair, Dataset, IndicatorDirection,
                   ThresholdDesign, active_set, build_threshold_design,
                   linear_predictor)
from .estimator import ThresholdLogisticClassifier, ThresholdQuantileRegressor
from .losses import (LossKind, LossSpec, empirical_risk, loss_derivative,
                     loss_prox, loss_value)
from .penalty import (PenaltyWeights, ScadConfig, penalty_weights,
                      scad_lla_weights)
from .pipeline import (FitConfig, LassoFit, TwoStepFit, default_mu, fit_full,
                       fit_lasso, fit_oracle, fit_scad)
from .search import (EmptyGridError, ProfileResult, TauGrid, argmin_tau,
                     build_grid, profile_objective, refit_tau)
from .simulation import (ExperimentConfig, ExperimentError, ReplicationRecord,
                         RiskEvaluator, SummaryRow, TrueModel, excess_risk,
                         gen_ar1_gaussian, gen_dataset, gen_dataset_from_truth,
                         replication_metrics, run_experiment, summarize)
from .solvers import (NumericalError, SolveResult, SolverOptions,
                      check_optimality, soft_threshold, solve_penalized)

__version__ = "0.1.0"

__all__ = [
    "ActiveSet", "CoefficientPair", "Dataset", "EmptyGridError",
    "ExperimentConfig", "ExperimentError", "FitConfig", "IndicatorDirection",
    "LassoFit", "LossKind", "LossSpec", "NumericalError", "PenaltyWeights",
    "ProfileResult", "ReplicationRecord", "RiskEvaluator", "ScadConfig",
    "SolveResult", "SolverOptions", "SummaryRow", "TauGrid", "ThresholdDesign",
    "ThresholdLogisticClassifier", "ThresholdQuantileRegressor", "TrueModel",
    "TwoStepFit", "active_set", "argmin_tau", "build_grid",
    "build_threshold_design", "check_optimality", "default_mu",
    "empirical_risk", "excess_risk", "fit_full", "fit_lasso", "fit_oracle",
    "fit_scad", "gen_ar1_gaussian", "gen_dataset", "gen_dataset_from_truth",
    "linear_predictor", "loss_derivative", "loss_prox", "loss_value",
    "penalty_weights", "profile_objective", "refit_tau",
    "replication_metrics", "run_experiment", "scad_lla_weights",
    "soft_threshold", "solve_penalized", "summarize",
]
