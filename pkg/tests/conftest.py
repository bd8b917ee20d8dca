import warnings

import numpy as np
import pytest

from glmsparse.losses import ProperLossFamily
from glmsparse.matrix_io import RowMatrix

FAMILY_SPECS = {
    "ell_0.5": ("ell_p", 0.5),
    "ell_1": ("ell_p", 1.0),
    "ell_2": ("ell_p", 2.0),
    "gamma_1": ("gamma_p", 1.0),
}


def make_family(name, m):
    kind, p = FAMILY_SPECS[name]
    return ProperLossFamily.from_spec(m, kind, p)


def random_matrix(rng, m, n, density=1.0, heavy=False):
    """Gaussian matrix with optional sparsity and a few heavy rows; full column rank."""
    a = rng.standard_normal((m, n))
    if density < 1.0:
        a *= rng.random((m, n)) < density
        a[np.arange(n), np.arange(n)] += 1.0
    if heavy:
        rows = rng.choice(m, size=max(1, m // 50), replace=False)
        a[rows] *= 10.0
    return RowMatrix.from_dense(a)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_regime_warning():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="epsilon=.*exceeds 1/r")
        yield
