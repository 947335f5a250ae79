import numpy as np
import pytest

from bernmix.dataset import BinaryDataset
from bernmix.model import Priors


def make_dataset(x, observed=None, ids=None, columns=None) -> BinaryDataset:
    x = np.asarray(x, dtype=np.int8)
    if observed is None:
        observed = np.ones_like(x, dtype=bool)
    observed = np.asarray(observed, dtype=bool)
    n, p = x.shape
    return BinaryDataset(
        x=x * observed,
        observed=observed,
        unit_ids=ids or [f"u{i}" for i in range(n)],
        column_names=columns or [f"v{j}" for j in range(p)],
    )


@pytest.fixture
def tiny_data() -> BinaryDataset:
    # 5 units, 2 variables, one missing cell
    x = [[1, 0], [1, 1], [0, 0], [0, 1], [1, 0]]
    observed = [[True, True], [True, True], [True, False], [True, True], [True, True]]
    return make_dataset(x, observed)


@pytest.fixture
def tiny_priors() -> Priors:
    return Priors(lam=1.0, k_max=3, gamma=1.0, alpha=1.0, beta=1.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
