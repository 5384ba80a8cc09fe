"""Smoke tests for the acceptance drivers on small synthetic stand-in files.

The real Australian and USPS files may be absent; these checks make sure the
code paths that would process them run and return sane numbers.
"""

import numpy as np
import pytest

from slang.dataio import serialize_libsvm
from slang.models import Dataset

from acceptance_support import Budget, epochs_to_converge, find_dataset, kl_and_variances, table_metrics


@pytest.fixture
def stand_in_dir(tmp_path):
    rng = np.random.default_rng(0)
    for name, d in (("australian_scale", 6), ("usps3vs5", 12)):
        x = rng.uniform(-1, 1, (80, d))
        w = rng.standard_normal(d)
        y = (rng.uniform(size=80) < 1 / (1 + np.exp(-x @ w))).astype(float)
        with open(tmp_path / name, "w") as fh:
            serialize_libsvm(Dataset(np.column_stack([x, np.ones(80)]), y), fh)
    return tmp_path


def test_find_dataset(stand_in_dir):
    assert find_dataset("australian", stand_in_dir).name == "australian_scale"
    assert find_dataset("breast-cancer", stand_in_dir) is None


def test_table_driver(stand_in_dir):
    elbo, nll = table_metrics(find_dataset("australian", stand_in_dir), "australian", "slang", 3,
                              Budget(splits=2, epochs=3, n_mc=50))
    assert np.isfinite(elbo) and 0 < nll < 2


def test_kl_driver(stand_in_dir):
    kl, var = kl_and_variances(find_dataset("usps3vs5", stand_in_dir), "usps3vs5", (1, 3), Budget(splits=1, epochs=5))
    assert set(kl) == {("slang", 1), ("slang", 3), "mean-field"}
    assert all(v > 0 for v in kl.values())
    assert set(var) == {("slang", 1), ("slang", 3), "mean-field", "reference"}


def test_convergence_driver(stand_in_dir):
    hit, final, curve = epochs_to_converge(find_dataset("australian", stand_in_dir), "australian", "slang", 2,
                                           range(2), 10)
    assert 1 <= hit <= 10 and curve.shape == (10,) and np.isfinite(final)
