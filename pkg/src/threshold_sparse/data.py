"""Data containers for two-regime sparse regression with a threshold variable."""

import csv
import enum

import numpy as np


class IndicatorDirection(enum.Enum):
    """Side of the threshold that forms the shifted regime.

    GREATER means the regime indicator is 1{q > tau}; LESS means 1{q < tau}.
    Ties q == tau belong to the base regime under both conventions.
    """

    GREATER = "greater"
    LESS = "less"


def _as_readonly(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


class Dataset:
    """An immutable (y, x, q) sample.

    Parameters
    ----------
    y : array-like, shape (n,)
        Response vector.
    x : array-like, shape (n, p)
        Regressor matrix. No intercept column is added; append a constant
        column yourself if you want one.
    q : array-like, shape (n,)
        Scalar threshold variable, one value per observation.
    feature_names : list of str, optional
        Names for the p regressor columns.
    """

    def __init__(self, y, x, q, feature_names=None):
        y = _as_readonly(np.asarray(y, dtype=np.float64).reshape(-1))
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError("x must be a 2-d array")
        x = _as_readonly(x)
        q = _as_readonly(np.asarray(q, dtype=np.float64).reshape(-1))
        n, p = x.shape
        if n < 1 or p < 1:
            raise ValueError("need n >= 1 and p >= 1")
        if y.shape[0] != n or q.shape[0] != n:
            raise ValueError(
                f"length mismatch: y has {y.shape[0]}, x has {n} rows, q has {q.shape[0]}"
            )
        for name, arr in (("y", y), ("x", x), ("q", q)):
            if not np.isfinite(arr).all():
                raise ValueError(f"non-finite entries in {name}")
        if feature_names is not None:
            feature_names = list(feature_names)
            if len(feature_names) != p:
                raise ValueError("feature_names length must equal p")
        self.y = y
        self.x = x
        self.q = q
        self.feature_names = feature_names
        self._gram_xx = None

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    def gram_xx(self):
        """Cached p x p matrix x'x (used to assemble augmented Gram matrices)."""
        if self._gram_xx is None:
            g = self.x.T @ self.x
            self._gram_xx = _as_readonly(g)
        return self._gram_xx

    @classmethod
    def from_csv(cls, path):
        """Load a dataset from a CSV file.

        Expected format: header row with a ``y`` column, a ``q`` column and
        the remaining columns taken as regressors in file order. UTF-8,
        ``.`` decimal separator, comma delimiter.
        """
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ValueError(f"{path}: empty file") from None
            header = [h.strip() for h in header]
            for required in ("y", "q"):
                if required not in header:
                    raise ValueError(f"{path}: missing required column '{required}'")
            iy = header.index("y")
            iq = header.index("q")
            feat_idx = [j for j in range(len(header)) if j not in (iy, iq)]
            if not feat_idx:
                raise ValueError(f"{path}: no regressor columns besides 'y' and 'q'")
            rows = []
            for k, row in enumerate(reader):
                if not row:
                    continue
                if len(row) != len(header):
                    raise ValueError(f"{path}: row {k + 2} has {len(row)} fields, expected {len(header)}")
                try:
                    rows.append([float(v) for v in row])
                except ValueError:
                    raise ValueError(f"{path}: non-numeric value in row {k + 2}") from None
        if not rows:
            raise ValueError(f"{path}: no data rows")
        data = np.asarray(rows, dtype=np.float64)
        names = [header[j] for j in feat_idx]
        return cls(data[:, iy], data[:, feat_idx], data[:, iq], feature_names=names)


class ThresholdDesign:
    """The dataset together with a fixed threshold and regime indicator.

    The implied design is the n x 2p matrix (x, x * regime_mask). Column j
    equals x[:, j] for j < p and x[:, j - p] * regime_mask for j >= p. The
    underlying x is shared with the dataset, never copied at construction.
    """

    def __init__(self, base, tau, direction, regime_mask):
        self.base = base
        self.tau = float(tau)
        self.direction = direction
        regime_mask = np.asarray(regime_mask, dtype=bool)
        regime_mask.setflags(write=False)
        self.regime_mask = regime_mask
        self._matrix = None
        self._matrix_t = None
        self._gram = None

    @property
    def n(self):
        return self.base.n

    @property
    def p(self):
        return self.base.p

    def matrix(self):
        """Materialize the n x 2p augmented matrix (cached)."""
        if self._matrix is None:
            x = self.base.x
            m = np.hstack([x, x * self.regime_mask[:, None]])
            self._matrix = _as_readonly(m)
        return self._matrix

    def matrix_t(self):
        """Cached contiguous transpose of :meth:`matrix`."""
        if self._matrix_t is None:
            self._matrix_t = _as_readonly(self.matrix().T)
        return self._matrix_t

    def gram(self):
        """Cached 2p x 2p Gram matrix of the augmented design.

        Uses the block identity gram = [[x'x, m], [m, m]] with
        m = x' diag(mask) x, so only the masked block is recomputed per tau.
        """
        if self._gram is None:
            x = self.base.x
            xm = x[self.regime_mask]
            m = xm.T @ xm if xm.shape[0] else np.zeros((self.p, self.p))
            g = np.empty((2 * self.p, 2 * self.p))
            g[: self.p, : self.p] = self.base.gram_xx()
            g[: self.p, self.p :] = m
            g[self.p :, : self.p] = m
            g[self.p :, self.p :] = m
            self._gram = _as_readonly(g)
        return self._gram


def build_threshold_design(dataset, tau, direction):
    """Build the regime mask and augmented-design view for a fixed tau."""
    tau = float(tau)
    if not np.isfinite(tau):
        raise ValueError("tau must be finite")
    if direction is IndicatorDirection.GREATER:
        mask = dataset.q > tau
    elif direction is IndicatorDirection.LESS:
        mask = dataset.q < tau
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return ThresholdDesign(dataset, tau, direction, mask)


class CoefficientPair:
    """Coefficient pair (beta, delta); the shifted regime has theta = beta + delta."""

    def __init__(self, beta, delta):
        beta = _as_readonly(np.asarray(beta, dtype=np.float64).reshape(-1))
        delta = _as_readonly(np.asarray(delta, dtype=np.float64).reshape(-1))
        if beta.shape != delta.shape:
            raise ValueError("beta and delta must have the same length")
        self.beta = beta
        self.delta = delta

    @property
    def p(self):
        return self.beta.shape[0]

    def theta(self):
        return self.beta + self.delta

    def as_alpha(self):
        """Concatenated length-2p vector (beta, delta)."""
        return np.concatenate([self.beta, self.delta])

    @classmethod
    def from_alpha(cls, alpha):
        alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
        if alpha.shape[0] % 2 != 0:
            raise ValueError("alpha length must be even")
        p = alpha.shape[0] // 2
        return cls(alpha[:p], alpha[p:])

    def flipped(self):
        """The same predictor expressed in the opposite indicator convention.

        (beta, delta) under LESS predicts identically to
        (beta + delta, -delta) under GREATER at every point with q != tau,
        and vice versa.
        """
        return CoefficientPair(self.beta + self.delta, -self.delta)

    def __eq__(self, other):
        if not isinstance(other, CoefficientPair):
            return NotImplemented
        return np.array_equal(self.beta, other.beta) and np.array_equal(self.delta, other.delta)

    def __repr__(self):
        return f"CoefficientPair(p={self.p})"


def linear_predictor(design, pair):
    """Per-observation predictor x_i' beta + x_i' delta * regime_mask_i."""
    if pair.p != design.p:
        raise ValueError(f"coefficient length {pair.p} does not match p={design.p}")
    x = design.base.x
    t = x @ pair.beta
    if np.any(pair.delta):
        t = t + design.regime_mask * (x @ pair.delta)
    return t


class ActiveSet:
    """Sorted indices of coefficients whose magnitude exceeds the tolerance.

    Indices are 0-based positions into the length-2p vector (or into beta /
    delta separately, depending on what was passed to :func:`active_set`).
    """

    def __init__(self, indices, tolerance):
        indices = np.asarray(sorted(int(i) for i in indices), dtype=np.int64)
        if indices.size and np.any(np.diff(indices) <= 0):
            raise ValueError("indices must be strictly increasing")
        indices.setflags(write=False)
        self.indices = indices
        self.tolerance = float(tolerance)

    def __len__(self):
        return int(self.indices.size)

    def __contains__(self, j):
        return bool(np.isin(j, self.indices))

    def __iter__(self):
        return iter(self.indices.tolist())

    def issubset(self, other):
        return bool(np.isin(self.indices, other.indices).all())

    def __repr__(self):
        return f"ActiveSet({self.indices.tolist()}, tol={self.tolerance:g})"


def active_set(v, tol):
    """Indices j with |v_j| > tol."""
    if tol < 0:
        raise ValueError("tol must be >= 0")
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    return ActiveSet(np.nonzero(np.abs(v) > tol)[0], tol)
