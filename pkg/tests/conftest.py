import numpy as np
import pytest

from sgdstab.models import Dataset, Example, LogisticModel, QuadraticModel, TanhMlpModel


def finite_difference_gradient(model, w, z):
    """Central differences with per-coordinate step h = 1e-5 (1 + |w_j|)."""
    w = np.asarray(w, dtype=float)
    g = np.empty_like(w)
    for j in range(len(w)):
        h = 1e-5 * (1.0 + abs(w[j]))
        wp = w.copy(); wp[j] += h
        wm = w.copy(); wm[j] -= h
        g[j] = (model.loss(wp, z) - model.loss(wm, z)) / (2.0 * h)
    return g


def random_example(rng, dim, label_kind="binary"):
    x = rng.standard_normal(dim)
    if label_kind == "binary":
        y = float(rng.integers(0, 2))
    elif label_kind == "tanh":
        y = float(np.tanh(rng.standard_normal()))
    else:
        y = float(rng.standard_normal())
    return Example(x, y)


def random_psd(rng, dim, scale=1.0):
    M = rng.standard_normal((dim, dim))
    return scale * (M @ M.T) / dim


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def logistic3():
    return LogisticModel(dim=3)


@pytest.fixture
def quad3(rng):
    return QuadraticModel(random_psd(np.random.default_rng(7), 3))


@pytest.fixture
def mlp_small():
    # 4 * 6 + 6 = 30 parameters, inside the dense-oracle comfort zone
    return TanhMlpModel(dim=4, hidden=6, output="tanh")


@pytest.fixture
def mlp_linear():
    return TanhMlpModel(dim=3, hidden=4, output="linear")


def blob_dataset(seed=0, m=40, d=3):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((m, d))
    y = rng.integers(0, 2, size=m).astype(float)
    return Dataset(X, y)
