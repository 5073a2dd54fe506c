"""The full two-step estimator: profiled lasso, SCAD refit, threshold refit.

Step 1 solves the weighted-l1 problem along the tau grid, Step 2 picks the
profiled minimizer (tau_hat, alpha_hat), Step 3 re-solves at tau_hat with
SCAD one-step weights and tuning mu, and Step 4 re-estimates tau by
minimizing the unpenalized risk with the Step-3 coefficients held fixed.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .data import (ActiveSet, CoefficientPair, IndicatorDirection, active_set,
                   build_threshold_design)
from .losses import LossKind, LossSpec, empirical_risk
from .penalty import ScadConfig, penalty_weights, scad_lla_weights
from .search import ProfileResult, argmin_tau, build_grid, profile_objective, refit_tau
from .solvers import SolveResult, SolverOptions, check_optimality, solve_penalized


def default_mu(spec, lam, p):
    """The tuning rule for the second step: log(p) * lam for the quantile
    loss and 0.5 * log(p) * lam for the logistic loss."""
    scale = 1.0 if spec.kind is LossKind.QUANTILE else 0.5
    return scale * math.log(p) * lam


@dataclass(frozen=True)
class FitConfig:
    """Everything the two-step fit needs besides the data."""

    spec: LossSpec
    lam: float
    mu: float | None = None  # None resolves to the default rule at fit time
    scad_a: float = 3.7
    tau_range: tuple | None = None  # None: central 70% of the observed q
    grid_mode: str = "observed"
    grid_size: int | None = None
    direction: IndicatorDirection = IndicatorDirection.GREATER
    solver: SolverOptions = field(default_factory=SolverOptions)
    active_tol: float = 1e-8

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be > 0 for penalized fits")
        if self.mu is not None and not self.mu > 0:
            raise ValueError("mu must be > 0")
        if self.active_tol < 0:
            raise ValueError("active_tol must be >= 0")
        if self.tau_range is not None and not self.tau_range[0] < self.tau_range[1]:
            raise ValueError("need tau_range[0] < tau_range[1]")

    def resolve_mu(self, p):
        return self.mu if self.mu is not None else default_mu(self.spec, self.lam, p)

    def scad(self, p):
        return ScadConfig(self.resolve_mu(p), self.scad_a)


def resolve_tau_range(config, dataset):
    """The configured threshold range, or the central 70% of q when unset."""
    if config.tau_range is not None:
        return config.tau_range
    return (float(np.quantile(dataset.q, 0.15)), float(np.quantile(dataset.q, 0.85)))


@dataclass
class LassoFit:
    """Step 1-2 output: the profiled minimizer and its full trace."""

    alpha_hat: CoefficientPair
    tau_hat: float
    profile: ProfileResult
    objective: float


@dataclass
class TwoStepFit:
    """Steps 1-4 output."""

    lasso: LassoFit
    alpha_tilde: CoefficientPair
    tau_tilde: float
    active_beta: ActiveSet
    active_delta: ActiveSet
    scad_weights: np.ndarray
    scad_objective: float
    scad_kkt_violation: float
    direction: IndicatorDirection = IndicatorDirection.GREATER

    @property
    def tau_hat(self):
        return self.lasso.tau_hat


def fit_lasso(dataset, config, workers=1):
    """Steps 1-2: profile the penalized objective over the grid."""
    grid = build_grid(dataset, resolve_tau_range(config, dataset),
                      config.grid_mode, config.grid_size)
    profile = profile_objective(dataset, grid, config.spec, config.lam,
                                opts=config.solver, direction=config.direction,
                                workers=workers)
    tau_hat, alpha_hat = argmin_tau(profile)
    return LassoFit(alpha_hat, tau_hat, profile,
                    float(profile.objectives[profile.argmin_index]))


def fit_scad(dataset, lasso, config):
    """Step 3: one SCAD/LLA reweighted solve at the profiled tau_hat.

    The weights come from the raw first-step magnitudes; the penalty level
    is mu (not lam). The first-step solution is a feasible warm start, and
    is kept if the solver should ever return something worse.
    """
    design = build_threshold_design(dataset, lasso.tau_hat, config.direction)
    weights = penalty_weights(design)
    scad = config.scad(dataset.p)
    w = scad_lla_weights(lasso.alpha_hat.as_alpha(), scad)
    res = solve_penalized(design, config.spec, scad.mu, weights,
                          lla_weights=w, init=lasso.alpha_hat, opts=config.solver)
    init_obj = _penalized_objective(design, config.spec, scad.mu, weights, w,
                                    lasso.alpha_hat.as_alpha())
    if init_obj < res.objective:
        # inexact solve landed above the feasible warm start: keep the start
        alpha = lasso.alpha_hat.as_alpha().copy()
        alpha[weights.zero_locked] = 0.0
        kkt = check_optimality(design, config.spec, scad.mu, weights, w, alpha)
        res = SolveResult(alpha=alpha, objective=init_obj, iterations=res.iterations,
                          converged=res.converged, kkt_violation=kkt, trace=res.trace)
    return CoefficientPair.from_alpha(res.alpha), w, res


def _penalized_objective(design, spec, lam, weights, w, alpha):
    pen = lam * w * weights.effective()
    pen = np.where(weights.zero_locked, 0.0, pen)
    a = np.where(weights.zero_locked, 0.0, alpha)
    pair = CoefficientPair.from_alpha(a)
    return float(empirical_risk(design, pair, spec) + pen @ np.abs(a))


def fit_full(dataset, config, workers=1):
    """Steps 1-4 composed."""
    lasso = fit_lasso(dataset, config, workers=workers)
    alpha_tilde, w, res = fit_scad(dataset, lasso, config)
    grid = build_grid(dataset, resolve_tau_range(config, dataset),
                      config.grid_mode, config.grid_size)
    tau_tilde = refit_tau(dataset, alpha_tilde, config.spec, grid,
                          direction=config.direction)
    return TwoStepFit(
        lasso=lasso,
        alpha_tilde=alpha_tilde,
        tau_tilde=tau_tilde,
        active_beta=active_set(alpha_tilde.beta, config.active_tol),
        active_delta=active_set(alpha_tilde.delta, config.active_tol),
        scad_weights=w,
        scad_objective=res.objective,
        scad_kkt_violation=res.kkt_violation,
        direction=config.direction,
    )


def fit_oracle(dataset, truth_active, spec, solver_opts=None, tau0=None, grid=None,
               direction=IndicatorDirection.GREATER):
    """Infeasible benchmark fits restricted to the true active set.

    With ``tau0`` given this is the Oracle-1 fit: an unpenalized
    M-estimation over the coordinates in ``truth_active`` at the true
    threshold. Without ``tau0`` (Oracle 2) the same restricted objective is
    profiled over ``grid`` and the smallest-tau minimizer returned.

    Returns (CoefficientPair, tau).
    """
    if len(truth_active) == 0:
        raise ValueError("truth_active must be non-empty")
    m = 2 * dataset.p
    extra_locked = np.ones(m, dtype=bool)
    extra_locked[np.asarray(truth_active.indices)] = False
    opts = solver_opts or SolverOptions()
    if tau0 is not None:
        design = build_threshold_design(dataset, tau0, direction)
        weights = penalty_weights(design).with_locked(extra_locked)
        res = solve_penalized(design, spec, 0.0, weights, opts=opts)
        return CoefficientPair.from_alpha(res.alpha), float(tau0)
    if grid is None:
        raise ValueError("need tau0 or a grid to profile over")
    profile = profile_objective(dataset, grid, spec, 0.0, opts=opts,
                                direction=direction, extra_locked=extra_locked)
    tau, pair = argmin_tau(profile)
    return pair, tau
