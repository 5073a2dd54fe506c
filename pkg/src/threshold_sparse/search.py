"""Threshold grid construction, the profiled sweep, and threshold refits."""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import CoefficientPair, IndicatorDirection, build_threshold_design
from .losses import loss_value
from .penalty import penalty_weights
from .solvers import solve_penalized

GRID_MODES = ("observed", "quantile", "equispaced")

# grid points per independently warm-started chunk when the sweep runs on
# multiple workers; fixed so results do not depend on the worker count
_CHUNK = 16


class EmptyGridError(ValueError):
    """No threshold candidates inside the requested range."""


@dataclass(frozen=True)
class TauGrid:
    """Strictly increasing threshold candidates within [range_low, range_high]."""

    taus: np.ndarray
    mode: str
    range_low: float
    range_high: float
    n_points: int | None = None

    def __post_init__(self):
        self.taus.setflags(write=False)

    def __len__(self):
        return int(self.taus.shape[0])


def build_grid(dataset, t_range, mode, n_points=None):
    """Build the tau grid.

    ``observed`` uses the sorted unique values of q inside the range (the
    exact profile set); ``quantile`` the empirical (j/N)-quantiles of q,
    j = 1..N, clipped to the range and deduplicated; ``equispaced`` N evenly
    spaced points spanning the range.
    """
    lo, hi = float(t_range[0]), float(t_range[1])
    if not lo < hi:
        raise ValueError("need range_low < range_high")
    if mode not in GRID_MODES:
        raise ValueError(f"unknown grid mode {mode!r}")
    if mode == "observed":
        taus = np.unique(dataset.q)
        taus = taus[(taus >= lo) & (taus <= hi)]
    else:
        if n_points is None or n_points < 2:
            raise ValueError("n_points >= 2 required for approximate grids")
        if mode == "quantile":
            probs = np.arange(1, n_points + 1) / n_points
            taus = np.unique(np.clip(np.quantile(dataset.q, probs), lo, hi))
        else:
            taus = np.linspace(lo, hi, n_points)
    if taus.size == 0:
        raise EmptyGridError(f"no threshold candidates in [{lo}, {hi}]")
    return TauGrid(np.ascontiguousarray(taus), mode, lo, hi, n_points)


@dataclass
class ProfileResult:
    """Per-tau solutions of the penalized problem along the grid."""

    taus: np.ndarray
    alphas: np.ndarray  # (grid, 2p)
    objectives: np.ndarray
    converged: np.ndarray
    kkt_violations: np.ndarray
    argmin_index: int
    n_nonconverged: int = 0

    def __len__(self):
        return int(self.taus.shape[0])


def _select_argmin(objectives, converged, tie_tol=0.0):
    """Smallest-tau minimizer among converged records.

    A later record displaces the incumbent only when it improves the
    objective by more than ``tie_tol`` (scaled by the incumbent), so ties
    and sub-solver noise on identical problems, as on flat profiles,
    resolve to the smallest tau.
    """
    best = -1
    best_obj = np.inf
    for k in range(objectives.shape[0]):
        if not converged[k]:
            continue
        tie = 0.0 if best < 0 else tie_tol * max(1.0, abs(best_obj))
        if objectives[k] < best_obj - tie:
            best = k
            best_obj = objectives[k]
    return best


def _sweep_chunk(dataset, taus, direction, spec, lam, lla_weights, extra_locked, opts, init):
    m = 2 * dataset.p
    alphas = np.empty((taus.shape[0], m))
    objectives = np.empty(taus.shape[0])
    converged = np.empty(taus.shape[0], dtype=bool)
    kkts = np.empty(taus.shape[0])
    warm = init
    for k, tau in enumerate(taus):
        design = build_threshold_design(dataset, tau, direction)
        weights = penalty_weights(design)
        if extra_locked is not None:
            weights = weights.with_locked(extra_locked)
        res = solve_penalized(design, spec, lam, weights,
                              lla_weights=lla_weights, init=warm, opts=opts)
        alphas[k] = res.alpha
        objectives[k] = res.objective
        converged[k] = res.converged
        kkts[k] = res.kkt_violation
        warm = res.alpha
    return alphas, objectives, converged, kkts


def profile_objective(dataset, grid, spec, lam, opts=None,
                      direction=IndicatorDirection.GREATER,
                      lla_weights=None, extra_locked=None, workers=1):
    """Sweep the grid in ascending tau order, warm-starting each solve.

    With ``workers > 1`` the grid is cut into fixed-size chunks that are
    swept independently (cold start at each chunk head, warm starts within),
    so the result does not depend on the worker count. The argmin excludes
    non-converged grid points; if every point failed to converge an error
    is raised.
    """
    if len(grid) == 0:
        raise EmptyGridError("empty tau grid")
    taus = grid.taus
    if workers <= 1:
        parts = [_sweep_chunk(dataset, taus, direction, spec, lam,
                              lla_weights, extra_locked, opts, None)]
    else:
        chunks = [taus[i:i + _CHUNK] for i in range(0, taus.shape[0], _CHUNK)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_sweep_chunk, dataset, c, direction, spec, lam,
                                lla_weights, extra_locked, opts, None)
                    for c in chunks]
            parts = [f.result() for f in futs]
    alphas = np.vstack([p[0] for p in parts])
    objectives = np.concatenate([p[1] for p in parts])
    converged = np.concatenate([p[2] for p in parts])
    kkts = np.concatenate([p[3] for p in parts])
    n_bad = int((~converged).sum())
    if n_bad:
        warnings.warn(f"{n_bad} of {len(grid)} grid solves did not converge; excluded from argmin",
                      RuntimeWarning)
    # the margin sits above per-solve noise at the active tolerances and far
    # below any real objective movement along the grid
    tie_tol = max(1e-8, 0.01 * (opts.tol_dual if opts is not None else 1e-6))
    argmin = _select_argmin(objectives, converged, tie_tol)
    if argmin < 0:
        raise RuntimeError("no converged grid point in the profile sweep")
    return ProfileResult(taus, alphas, objectives, converged, kkts, argmin, n_bad)


def argmin_tau(profile):
    """The profiled minimizer: (tau_hat, alpha_hat at tau_hat)."""
    if profile.argmin_index < 0 or not profile.converged[profile.argmin_index]:
        raise RuntimeError("profile has no converged record")
    k = profile.argmin_index
    return float(profile.taus[k]), CoefficientPair.from_alpha(profile.alphas[k])


def refit_tau(dataset, pair, spec, grid, direction=IndicatorDirection.GREATER):
    """Re-estimate tau by minimizing the unpenalized risk with coefficients fixed.

    The risk is evaluated on the grid with the base and shift predictors
    precomputed once, so each grid point costs O(n). When the shift is
    identically zero the risk is constant in tau and the smallest grid point
    is returned (the documented convention for the non-identified case).
    """
    if len(grid) == 0:
        raise EmptyGridError("empty tau grid")
    y = dataset.y
    base = dataset.x @ pair.beta
    if not np.any(pair.delta):
        return float(grid.taus[0])
    shift = dataset.x @ pair.delta
    q = dataset.q
    best_tau = None
    best_risk = np.inf
    for tau in grid.taus:
        mask = (q > tau) if direction is IndicatorDirection.GREATER else (q < tau)
        risk = float(np.mean(loss_value(spec, y, base + mask * shift)))
        if risk < best_risk:
            best_risk = risk
            best_tau = float(tau)
    return best_tau
