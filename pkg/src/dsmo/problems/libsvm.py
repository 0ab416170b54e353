"""Reader and writer for LIBSVM-format binary classification data.

Grammar (one sample per non-blank line)::

    <label> <index>:<value> <index>:<value> ...

Indices are 1-based and strictly increasing within a line.  Labels ``+1``
and ``1`` map to 1; ``-1`` and ``0`` map to 0; anything else is rejected.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from dsmo.errors import ParseError


@dataclass(eq=False)
class Dataset:
    labels: np.ndarray  # (n,) in {0, 1}
    features: np.ndarray  # (n, d) dense

    def __len__(self):
        return len(self.labels)

    @property
    def n_features(self):
        return self.features.shape[1]


def _label(token, line, col):
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"label {token!r} is not numeric", line, col) from None
    if value == 1.0:
        return 1
    if value in (0.0, -1.0):
        return 0
    raise ParseError(f"label {token!r} is not a binary label (expected +1/1/0/-1)", line, col)


def parse_libsvm(stream, n_features=None) -> Dataset:
    """Parse a text stream (or string) into a dense :class:`Dataset`.

    The feature dimension is the largest index seen unless ``n_features``
    is given.  Errors carry 1-based line and column numbers.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    labels, rows = [], []
    width = 0
    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip():
            continue
        col = len(line) - len(line.lstrip()) + 1
        tokens = []
        pos = 0
        for tok in line.split():
            pos = line.index(tok, pos)
            tokens.append((tok, pos + 1))
            pos += len(tok)
        (head, col), rest = tokens[0], tokens[1:]
        labels.append(_label(head, lineno, col))
        row = {}
        last = 0
        for tok, col in rest:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise ParseError(f"missing ':' in {tok!r}", lineno, col)
            try:
                idx = int(idx_s)
            except ValueError:
                raise ParseError(f"index {idx_s!r} is not an integer", lineno, col) from None
            try:
                val = float(val_s)
            except ValueError:
                raise ParseError(f"value {val_s!r} is not numeric", lineno, col + len(idx_s) + 1) from None
            if idx <= last:
                raise ParseError(f"index {idx} is not strictly increasing (previous {last})", lineno, col)
            row[idx] = val
            last = idx
        width = max(width, last)
        rows.append(row)

    if n_features is None:
        n_features = width
    elif width > n_features:
        raise ParseError(f"index {width} exceeds declared dimension {n_features}")
    X = np.zeros((len(rows), n_features))
    for i, row in enumerate(rows):
        for idx, val in row.items():
            X[i, idx - 1] = val
    return Dataset(np.array(labels, dtype=int), X)


def read_libsvm(path, n_features=None) -> Dataset:
    with open(path) as fh:
        return parse_libsvm(fh, n_features=n_features)


def write_libsvm(dataset: Dataset, stream) -> None:
    """Write ``dataset`` with round-trip exact float formatting; zero features are omitted."""
    for label, row in zip(dataset.labels, dataset.features):
        parts = ["+1" if label == 1 else "-1"]
        parts += [f"{j + 1}:{float(v)!r}" for j, v in enumerate(row) if v != 0.0]
        stream.write(" ".join(parts) + "\n")


def synthetic_classification(n, n_features=14, seed=0, scale=1.0) -> Dataset:
    """Linearly separable-ish binary data with features in ``[-scale, scale]``.

    Stands in for the 14-feature Australian dataset; labels come from a random
    hyperplane with 10% label flips.
    """
    rng = np.random.default_rng(seed)
    X = rng.uniform(-scale, scale, (n, n_features))
    w = rng.standard_normal(n_features)
    y = (X @ w > 0).astype(int)
    flip = rng.random(n) < 0.1
    y[flip] = 1 - y[flip]
    return Dataset(y, X)
