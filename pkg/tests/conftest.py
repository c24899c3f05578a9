import math
import os

import numpy as np
import pytest

from idg.data import DomainDataset
from idg.models import ArchitectureSpec, AugmentedParams, flatten


def sorted_tail_cvar(risks, lam):
    """CVaR from the sorted profile: atom at the lam-quantile plus the tail mean."""
    r = np.sort(np.asarray(risks, dtype=float))
    d = r.size
    if lam == 1.0:
        return float(r[-1])
    # smallest r_lam with F(r_lam) >= lam, F the empirical cdf
    F = np.arange(1, d + 1) / d
    k = int(np.argmax(F >= lam - 1e-12))
    r_lam = r[k]
    F_lam = np.count_nonzero(r <= r_lam) / d
    tail = r[r > r_lam].sum() / d
    return float(((F_lam - lam) * r_lam + tail) / (1.0 - lam))


def variational_cvar(risks, lam):
    """min over t of t + mean((R - t)_+) / (1 - lam); the minimum sits on a data point."""
    r = np.asarray(risks, dtype=float)
    if lam == 1.0:
        return float(r.max())
    return float(min(t + np.maximum(r - t, 0.0).mean() / (1.0 - lam) for t in r))


def linear_domain(xs, ys, domain_id="d"):
    return DomainDataset(domain_id, np.asarray(xs, dtype=float)[:, None], ys)


def linear_model(theta, b=0.0):
    spec = ArchitectureSpec(1)
    return AugmentedParams(spec, flatten(spec, {"W_out": [[theta]], "b_out": [b]}))


def relative_error(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))))


ARCHITECTURES = [
    ArchitectureSpec(1),
    ArchitectureSpec(1, conditioning="film-affine"),
    ArchitectureSpec(3, (5,), "tanh"),
    ArchitectureSpec(3, (5,), "tanh", conditioning="film-affine"),
    ArchitectureSpec(2, (4, 3), "relu", conditioning="film-affine"),
    ArchitectureSpec(2, (4,), "identity", "logit", "film-affine"),
    ArchitectureSpec(4, (6, 2), "tanh", "logit", "none"),
]


def random_params(spec, rng, scale=1.0):
    from idg.models import param_count

    return AugmentedParams(spec, scale * rng.normal(size=param_count(spec)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def mnist_arrays(n):
    """First ``n`` MNIST digits from the copy bundled with mlxtend."""
    mlxtend_data = pytest.importorskip("mlxtend.data")
    X, y = mlxtend_data.mnist_data()
    return X[:n].reshape(-1, 28, 28).astype(np.uint8), y[:n].astype(np.uint8)


def isclose(a, b, tol):
    return math.isclose(a, b, rel_tol=0.0, abs_tol=tol)


DATA_DIR = os.environ.get("IDG_DATA_DIR", "")
