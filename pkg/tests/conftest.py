import numpy as np
import pytest

from threshold_sparse import Dataset, IndicatorDirection, LossSpec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_dataset(rng, n=40, p=3, quantile=True, beta=None, delta=None, tau0=0.5,
                 direction=IndicatorDirection.GREATER):
    """Small synthetic dataset with a known threshold structure."""
    beta = np.zeros(p) if beta is None else np.asarray(beta, dtype=float)
    delta = np.zeros(p) if delta is None else np.asarray(delta, dtype=float)
    x = rng.standard_normal((n, p))
    q = rng.uniform(0, 1, n)
    mask = q > tau0 if direction is IndicatorDirection.GREATER else q < tau0
    t = x @ beta + mask * (x @ delta)
    if quantile:
        y = t + rng.standard_normal(n)
    else:
        y = (t + rng.logistic(0, 1, n) > 0).astype(float)
    return Dataset(y, x, q)


@pytest.fixture
def quantile_spec():
    return LossSpec.quantile(0.5)


@pytest.fixture
def logistic_spec():
    return LossSpec.logistic()
