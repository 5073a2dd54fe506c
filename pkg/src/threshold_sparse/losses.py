"""Loss functions: check loss for quantile regression and logistic deviance.

Each loss exposes a pointwise value, the (sub)gradient in its second
argument, and the proximal operator needed by the ADMM solver. All three
accept scalars or numpy arrays and broadcast elementwise.
"""

import enum
from dataclasses import dataclass

import numpy as np


class LossKind(enum.Enum):
    QUANTILE = "quantile"
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class LossSpec:
    """Loss selector. ``gamma`` is the quantile level; ignored for logistic."""

    kind: LossKind
    gamma: float = 0.5

    def __post_init__(self):
        if self.kind is LossKind.QUANTILE and not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")

    @classmethod
    def quantile(cls, gamma=0.5):
        return cls(LossKind.QUANTILE, float(gamma))

    @classmethod
    def logistic(cls):
        return cls(LossKind.LOGISTIC)


def _check_binary(y):
    y = np.asarray(y, dtype=np.float64)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("logistic loss requires y in {0, 1}")
    return y


def softplus(t):
    """log(1 + exp(t)) without overflow."""
    t = np.asarray(t, dtype=np.float64)
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def sigmoid(t):
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def loss_value(spec, y, t):
    """Pointwise loss.

    Quantile: (y - t)(gamma - 1{y - t <= 0}). Logistic: the negative
    log-likelihood -[y log g(t) + (1 - y) log(1 - g(t))], evaluated in the
    overflow-safe softplus form.
    """
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if spec.kind is LossKind.QUANTILE:
        u = y - t
        return u * (spec.gamma - (u <= 0))
    y = _check_binary(y)
    return softplus(t) - y * t


def loss_derivative(spec, y, t):
    """Derivative of the loss in t.

    For the quantile loss this is the subgradient element
    1{y - t <= 0} - gamma, the selection consistent with the population
    score; the tie y == t takes the "<=" branch. For logistic it is
    g(t) - y.
    """
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if spec.kind is LossKind.QUANTILE:
        return ((y - t) <= 0) - spec.gamma
    y = _check_binary(y)
    return sigmoid(t) - y


def loss_prox(spec, y, v, c):
    """argmin_z c * loss(y, z) + (z - v)^2 / 2.

    The quantile case has a closed form (a shifted dead zone around y).
    The logistic case is solved by a safeguarded Newton iteration on the
    strictly increasing optimality function z - v + c (g(z) - y), with a
    bisection fallback on the bracket [v - c, v + c].
    """
    if not c > 0:
        raise ValueError("c must be > 0")
    y = np.asarray(y, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    scalar = y.ndim == 0 and v.ndim == 0
    y, v = np.atleast_1d(y), np.atleast_1d(v)
    if spec.kind is LossKind.QUANTILE:
        r = y - v
        u = np.where(
            r > c * spec.gamma,
            r - c * spec.gamma,
            np.where(r < -c * (1.0 - spec.gamma), r + c * (1.0 - spec.gamma), 0.0),
        )
        z = y - u
    else:
        y = _check_binary(y)
        z = _prox_logistic(y, v, c)
    return float(z[0]) if scalar else z


def _prox_logistic(y, v, c, tol=1e-12, max_iter=50):
    lo = v - c
    hi = v + c
    z = v.astype(np.float64).copy()
    for _ in range(max_iter):
        f = z - v + c * (sigmoid(z) - y)
        if np.all(np.abs(f) <= tol):
            break
        g = sigmoid(z)
        step = f / (1.0 + c * g * (1.0 - g))
        z_new = z - step
        # keep the bracket valid: f is increasing, so sign(f) tells the side
        lo = np.where(f < 0, z, lo)
        hi = np.where(f > 0, z, hi)
        out = (z_new < lo) | (z_new > hi)
        z = np.where(out, 0.5 * (lo + hi), z_new)
    return z


def empirical_risk(design, pair, spec):
    """Mean loss of the pair's predictor over the design's sample."""
    from .data import linear_predictor

    t = linear_predictor(design, pair)
    return float(np.mean(loss_value(spec, design.base.y, t)))


def lipschitz_constant(spec):
    """Lipschitz constant of t -> loss(y, t): max(gamma, 1-gamma) or 1."""
    if spec.kind is LossKind.QUANTILE:
        return max(spec.gamma, 1.0 - spec.gamma)
    return 1.0
