"""Penalty machinery: per-column scale weights and the SCAD one-step reweighting."""

from dataclasses import dataclass

import numpy as np

DEGENERACY_FLOOR = 1e-10


@dataclass(frozen=True)
class PenaltyWeights:
    """Data-dependent penalty scales d_j for the 2p augmented columns.

    ``d`` holds the raw root second moments; ``zero_locked`` marks columns
    whose scale fell below the degeneracy floor. A locked coefficient is
    pinned at exactly 0 by the solver (its weight is treated as 1
    internally so the objective stays well posed).
    """

    d: np.ndarray
    zero_locked: np.ndarray

    def __post_init__(self):
        self.d.setflags(write=False)
        self.zero_locked.setflags(write=False)

    @property
    def size(self):
        return self.d.shape[0]

    def effective(self):
        """Weights with locked entries replaced by 1."""
        return np.where(self.zero_locked, 1.0, self.d)

    def with_locked(self, extra_locked):
        """A copy with additional coordinates pinned to zero (oracle fits)."""
        extra_locked = np.asarray(extra_locked, dtype=bool)
        if extra_locked.shape != self.zero_locked.shape:
            raise ValueError("locked mask has wrong length")
        return PenaltyWeights(self.d.copy(), self.zero_locked | extra_locked)


def penalty_weights(design):
    """Root mean square of each augmented column: d_j = sqrt(mean_i x_ij(tau)^2).

    The first p entries do not depend on tau; the delta-block entries are
    restricted to the active regime and shrink with it. Entries below the
    degeneracy floor are zero-locked: a shift coefficient with no in-regime
    data is unidentified and gets pinned to 0 rather than carrying an
    effectively infinite penalty.
    """
    x = design.base.x
    n = design.n
    d_beta = np.sqrt(np.mean(x * x, axis=0))
    d_delta = np.sqrt((x * x).T @ design.regime_mask / n)
    d = np.concatenate([d_beta, d_delta])
    return PenaltyWeights(d, d < DEGENERACY_FLOOR)


@dataclass(frozen=True)
class ScadConfig:
    """Second-step tuning: penalty level mu and SCAD shape a (3.7 by convention)."""

    mu: float
    a: float = 3.7

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be > 0")
        if not self.a > 1:
            raise ValueError("a must be > 1")


def scad_lla_weights(alpha_hat, cfg):
    """One-step local linear approximation weights of the SCAD penalty.

    w_j = 1 for |a_j| < mu, 0 for |a_j| > a*mu, and linear in between:
    (a*mu - |a_j|) / (mu * (a - 1)). Continuous and non-increasing in |a_j|.
    """
    a = np.abs(np.asarray(alpha_hat, dtype=np.float64))
    return np.clip((cfg.a * cfg.mu - a) / (cfg.mu * (cfg.a - 1.0)), 0.0, 1.0)
