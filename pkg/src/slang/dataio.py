"""Dataset ingestion: LIBSVM text, CSV cache, synthetic data and splits."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .errors import ConfigError, ParseError, UnsupportedLabelError
from .models import Dataset

__all__ = [
    "SplitSpec",
    "parse_libsvm",
    "load_libsvm",
    "serialize_libsvm",
    "write_csv",
    "read_csv",
    "make_cubic_toy",
    "split",
]


def _map_binary_labels(labels, first_lineno):
    values = sorted(set(labels))
    if set(values) <= {-1.0, 1.0}:
        mapping = {-1.0: 0.0, 1.0: 1.0}
    elif set(values) <= {0.0, 1.0}:
        mapping = {0.0: 0.0, 1.0: 1.0}
    elif len(values) == 2:
        mapping = {values[0]: 0.0, values[1]: 1.0}
    else:
        shown = ", ".join(f"{v:g}" for v in values[:6])
        raise UnsupportedLabelError(f"expected binary labels, found {len(values)} classes ({shown}...)",
                                    first_lineno)
    return np.array([mapping[v] for v in labels])


def parse_libsvm(stream: TextIO | Iterable[str], task: str = "classification", n_features: int | None = None,
                 add_bias: bool = True) -> Dataset:
    """Parse ``<label> <idx>:<val> ...`` lines into a dense :class:`Dataset`.

    Indices are 1-based and must be strictly increasing within a line; ``#``
    starts a comment. The feature count is the largest index seen unless
    ``n_features`` is given. For classification, labels {-1, +1} map to
    {0, 1}, and any other pair of distinct labels maps smaller -> 0,
    larger -> 1. A constant-1 bias column is appended when ``add_bias``.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    labels, rows, linenos = [], [], []
    max_index = 0
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label = float(tokens[0])
        except ValueError:
            raise ParseError(f"bad label {tokens[0]!r}", lineno) from None
        entries = {}
        prev = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise ParseError(f"expected <index>:<value>, got {tok!r}", lineno)
            try:
                idx, val = int(idx_s), float(val_s)
            except ValueError:
                raise ParseError(f"bad feature {tok!r}", lineno) from None
            if idx < 1:
                raise ParseError(f"feature index {idx} is not 1-based", lineno)
            if idx <= prev:
                raise ParseError(f"feature indices not strictly increasing at {idx}", lineno)
            if not np.isfinite(val):
                raise ParseError(f"non-finite value {val_s!r}", lineno)
            prev = idx
            entries[idx] = val
        max_index = max(max_index, prev)
        labels.append(label)
        rows.append(entries)
        linenos.append(lineno)
    if n_features is None:
        n_features = max_index
    elif n_features < max_index:
        raise ParseError(f"feature index {max_index} exceeds n_features={n_features}")
    x = np.zeros((len(rows), n_features + (1 if add_bias else 0)))
    for r, entries in enumerate(rows):
        for idx, val in entries.items():
            x[r, idx - 1] = val
    if add_bias:
        x[:, -1] = 1.0
    if task == "classification":
        y = _map_binary_labels(labels, linenos[0] if linenos else None)
    else:
        y = np.array(labels, dtype=np.float64)
    return Dataset(x.reshape(len(rows), -1), y, task)


def load_libsvm(path, **kwargs) -> Dataset:
    with open(path, "r", encoding="ascii") as fh:
        return parse_libsvm(fh, **kwargs)


def serialize_libsvm(ds: Dataset, stream: TextIO, has_bias: bool = True) -> None:
    """Write ``ds`` in LIBSVM format with 17 significant digits.

    The bias column is dropped when ``has_bias``. The last feature is always
    written (even when zero) so the feature count survives a round trip.
    Classification labels are written as -1/+1.
    """
    x = ds.features[:, :-1] if has_bias else ds.features
    d = x.shape[1]
    for label, row in zip(ds.targets, x):
        if ds.task == "classification":
            parts = ["+1" if label == 1.0 else "-1"]
        else:
            parts = [f"{label:.17g}"]
        for j in range(d):
            if row[j] != 0.0 or j == d - 1:
                parts.append(f"{j + 1}:{row[j]:.17g}")
        stream.write(" ".join(parts) + "\n")


def write_csv(ds: Dataset, path) -> None:
    """Cache ``ds`` as CSV with a header row ``target,x1,...,xD``."""
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target"] + [f"x{j + 1}" for j in range(ds.d)])
        for y, row in zip(ds.targets, ds.features):
            w.writerow([repr(float(y))] + [repr(float(v)) for v in row])


def read_csv(path, task: str = "classification") -> Dataset:
    with open(path, "r", newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "target":
            raise ParseError("CSV cache must start with a 'target,x1,...' header", 1)
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(rec)}", lineno)
            try:
                rows.append([float(v) for v in rec])
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    return Dataset(data[:, 1:], data[:, 0], task)


def make_cubic_toy(n: int = 30, seed=0) -> Dataset:
    """``x ~ U[-4, 4]``, ``y = x^3 + eps`` with ``eps ~ N(0, 9)``; no bias column."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-4.0, 4.0, size=n)
    y = x ** 3 + 3.0 * rng.standard_normal(n)
    return Dataset(x[:, None], y, "regression")


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.5
    seed: int = 0
    standardize: bool = False
    has_bias: bool = True

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")


def split(ds: Dataset, spec: SplitSpec):
    """Seeded random train/test partition, optionally standardized on train.

    Standardization leaves the bias column and zero-variance columns alone.
    """
    n_train = int(ds.n * spec.train_fraction)
    if n_train < 1 or n_train >= ds.n:
        raise ConfigError(f"split of {ds.n} rows at {spec.train_fraction} leaves an empty side")
    perm = np.random.default_rng(spec.seed).permutation(ds.n)
    train_idx, test_idx = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    x_train, x_test = ds.features[train_idx], ds.features[test_idx]
    if spec.standardize:
        cols = np.arange(ds.d - 1 if spec.has_bias else ds.d)
        mu = x_train[:, cols].mean(axis=0)
        sd = x_train[:, cols].std(axis=0)
        ok = sd > 0
        cols, mu, sd = cols[ok], mu[ok], sd[ok]
        x_train = x_train.copy()
        x_test = x_test.copy()
        x_train[:, cols] = (x_train[:, cols] - mu) / sd
        x_test[:, cols] = (x_test[:, cols] - mu) / sd
    return (Dataset(x_train, ds.targets[train_idx], ds.task),
            Dataset(x_test, ds.targets[test_idx], ds.task))


def dataset_from_path(path, task="classification", fmt=None) -> Dataset:
    """Load a LIBSVM file, or a CSV cache when the suffix is ``.csv``."""
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix == ".csv" else "libsvm")
    if fmt == "csv":
        return read_csv(path, task)
    if fmt == "libsvm":
        return load_libsvm(path, task=task)
    raise ConfigError(f"unknown dataset format {fmt!r}")
