import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from slang.dataio import (
    SplitSpec,
    dataset_from_path,
    make_cubic_toy,
    parse_libsvm,
    read_csv,
    serialize_libsvm,
    split,
    write_csv,
)
from slang.errors import ConfigError, ParseError, UnsupportedLabelError
from slang.models import Dataset

from conftest import data_dir


class TestParse:
    def test_single_line(self):
        ds = parse_libsvm("1 1:0.5 3:-2")
        np.testing.assert_array_equal(ds.targets, [1.0])
        np.testing.assert_array_equal(ds.features, [[0.5, 0.0, -2.0, 1.0]])

    def test_negative_label_maps_to_zero(self):
        ds = parse_libsvm("-1 2:3")
        np.testing.assert_array_equal(ds.targets, [0.0])
        np.testing.assert_array_equal(ds.features, [[0.0, 3.0, 1.0]])

    def test_comments_and_blank_lines(self):
        ds = parse_libsvm("# header\n\n+1 1:2 # trailing\n-1 1:4\n")
        assert ds.n == 2
        np.testing.assert_array_equal(ds.features[:, 0], [2.0, 4.0])

    def test_other_binary_labels(self):
        ds = parse_libsvm("2 1:1\n4 1:2\n2 1:3")
        np.testing.assert_array_equal(ds.targets, [0.0, 1.0, 0.0])

    def test_multiclass_rejected(self):
        with pytest.raises(UnsupportedLabelError):
            parse_libsvm("1 1:1\n2 1:1\n3 1:1")

    @pytest.mark.parametrize("text, lineno", [
        ("1 1:1\n1 2:1 1:3", 2),
        ("1 1:1\n\n1 0:2", 3),
        ("1 1:x", 1),
        ("abc 1:1", 1),
        ("1 1:1\n-1 3", 2),
        ("1 2:1 2:1", 1),
    ])
    def test_malformed_lines_report_line_number(self, text, lineno):
        with pytest.raises(ParseError, match=rf"^line {lineno}:"):
            parse_libsvm(text)

    def test_explicit_feature_count(self):
        assert parse_libsvm("1 1:1", n_features=4).d == 5
        with pytest.raises(ParseError):
            parse_libsvm("1 5:1", n_features=4)

    def test_regression_targets_kept(self):
        ds = parse_libsvm("2.5 1:1\n-7 1:2", task="regression")
        np.testing.assert_array_equal(ds.targets, [2.5, -7.0])


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@st.composite
def datasets(draw):
    n = draw(st.integers(1, 6))
    d = draw(st.integers(1, 5))
    x = draw(arrays(np.float64, (n, d), elements=finite | st.just(0.0)))
    y = draw(arrays(np.float64, (n,), elements=st.sampled_from([0.0, 1.0])))
    return Dataset(np.column_stack([x, np.ones(n)]), y)


class TestRoundTrip:
    @given(datasets())
    def test_libsvm_round_trip_is_exact(self, ds):
        buf = io.StringIO()
        serialize_libsvm(ds, buf)
        back = parse_libsvm(io.StringIO(buf.getvalue()))
        np.testing.assert_array_equal(back.features, ds.features)
        np.testing.assert_array_equal(back.targets, ds.targets)

    @given(datasets())
    def test_csv_round_trip_is_exact(self, tmp_path_factory, ds):
        path = tmp_path_factory.mktemp("csv") / "cache.csv"
        write_csv(ds, path)
        back = read_csv(path)
        np.testing.assert_array_equal(back.features, ds.features)
        np.testing.assert_array_equal(back.targets, ds.targets)

    def test_csv_header(self, tmp_path):
        path = tmp_path / "c.csv"
        write_csv(Dataset(np.ones((1, 2)), [1.0]), path)
        assert path.read_text().splitlines()[0] == "target,x1,x2"
        assert dataset_from_path(path).n == 1

    def test_csv_without_header_rejected(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text("1,2\n")
        with pytest.raises(ParseError):
            read_csv(path)


class TestCubicToy:
    def test_deterministic(self):
        a, b = make_cubic_toy(30, seed=7), make_cubic_toy(30, seed=7)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.targets, b.targets)

    def test_support(self):
        ds = make_cubic_toy(1000, seed=1)
        assert np.all(np.abs(ds.features) <= 4.0)

    def test_noise_moments(self):
        n = 100_000
        ds = make_cubic_toy(n, seed=2)
        resid = ds.targets - ds.features[:, 0] ** 3
        assert abs(resid.mean()) <= 3 * np.sqrt(9.0 / n)
        # Var of the sample variance of a normal: 2 sigma^4 / (n - 1)
        assert abs(resid.var(ddof=1) - 9.0) <= 3 * np.sqrt(2 * 81.0 / (n - 1))

    def test_rejects_empty(self):
        with pytest.raises(ConfigError):
            make_cubic_toy(0)


class TestSplit:
    def _data(self, n=10, d=3):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((n, d))
        x[:, -1] = 1.0
        return Dataset(x, rng.integers(0, 2, n).astype(float))

    def test_half_split_sizes(self):
        train, test = split(self._data(10), SplitSpec(0.5, seed=0))
        assert (train.n, test.n) == (5, 5)

    def test_same_seed_same_split(self):
        a = split(self._data(), SplitSpec(0.5, seed=3))
        b = split(self._data(), SplitSpec(0.5, seed=3))
        np.testing.assert_array_equal(a[0].features, b[0].features)

    @given(st.integers(2, 40), st.floats(0.05, 0.95), st.integers(0, 1000))
    def test_partition(self, n, fraction, seed):
        ds = self._data(n)
        if not 1 <= int(n * fraction) < n:
            return
        train, test = split(ds, SplitSpec(fraction, seed=seed))
        rows = np.vstack([train.features, test.features])
        assert train.n + test.n == n
        key = lambda a: sorted(map(tuple, a))
        assert key(rows) == key(ds.features)

    def test_standardize(self):
        ds = self._data(40, 4)
        x = ds.features.copy()
        x[:, 1] = 5.0
        train, test = split(Dataset(x, ds.targets), SplitSpec(0.5, seed=1, standardize=True))
        np.testing.assert_allclose(train.features[:, [0, 2]].mean(axis=0), 0.0, atol=1e-10)
        np.testing.assert_allclose(train.features[:, [0, 2]].std(axis=0), 1.0, atol=1e-10)
        np.testing.assert_array_equal(train.features[:, 1], 5.0)
        np.testing.assert_array_equal(test.features[:, -1], 1.0)

    def test_bad_fraction(self):
        with pytest.raises(ConfigError):
            SplitSpec(1.0)


def test_bundled_breast_cancer_file():
    path = data_dir() / "breast-cancer_scale"
    if not path.exists():
        pytest.skip("breast-cancer_scale not present")
    ds = dataset_from_path(path)
    assert (ds.n, ds.d) == (683, 11)
    assert ds.targets.sum() == 239
