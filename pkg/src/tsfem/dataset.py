"""Clustered data container, CSV ingestion and fold assignment.

Units are stored as dense integer codes ``0..n-1`` in first-appearance
order; the original labels are kept in ``unit_labels`` so models fitted on
a subset can still be matched against new files.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

KINDS = ("continuous", "binary", "ordinal")


class LoadError(ValueError):
    """Raised when a data file cannot be turned into a valid dataset."""


@dataclass(frozen=True)
class CovariateMeta:
    name: str
    kind: str
    values: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"covariate {self.name!r}: unknown kind {self.kind!r}")
        if not self.values:
            raise ValueError(f"covariate {self.name!r}: no observed values")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError(f"covariate {self.name!r}: values must be strictly increasing")
        if self.kind == "binary" and not set(self.values) <= {0.0, 1.0}:
            raise ValueError(f"covariate {self.name!r}: binary values must be in {{0, 1}}")

    @classmethod
    def from_column(cls, name: str, column: np.ndarray, kind: str | None = None) -> "CovariateMeta":
        values = tuple(float(v) for v in np.unique(column))
        if kind is None:
            kind = "binary" if set(values) <= {0.0, 1.0} else "continuous"
        return cls(name, kind, values)


@dataclass(frozen=True, eq=False)
class ClusteredDataset:
    """Outcome, unit membership and covariates of clustered observations.

    Attributes:
        y: outcome, shape (N,).
        unit: unit code per row in ``0..n-1``.
        X: covariates, shape (N, p).
        meta: one :class:`CovariateMeta` per column of ``X``.
        unit_labels: original label of each unit code.
    """

    y: np.ndarray
    unit: np.ndarray
    X: np.ndarray
    meta: tuple[CovariateMeta, ...]
    unit_labels: tuple[str, ...]
    n_i: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        y = np.array(self.y, dtype=float)
        unit = np.array(self.unit, dtype=np.int64)
        X = np.array(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(len(y), -1)
        if X.ndim != 2:
            raise ValueError("X must be two-dimensional")
        N = len(y)
        if N == 0:
            raise ValueError("dataset has no rows")
        if unit.shape != (N,) or X.shape[0] != N:
            raise ValueError("y, unit and X must have the same number of rows")
        if len(self.meta) != X.shape[1]:
            raise ValueError("need one CovariateMeta per covariate column")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise ValueError("missing or non-finite values are not allowed")
        n = len(self.unit_labels)
        if unit.min() < 0 or unit.max() >= n:
            raise ValueError("unit codes must lie in 0..n-1")
        n_i = np.bincount(unit, minlength=n)
        if np.any(n_i == 0):
            empty = [self.unit_labels[i] for i in np.flatnonzero(n_i == 0)]
            raise ValueError(f"units without rows: {empty}")
        for k, m in enumerate(self.meta):
            if m.kind == "binary" and not np.all((X[:, k] == 0) | (X[:, k] == 1)):
                raise ValueError(f"covariate {m.name!r} is declared binary but has other values")
        for arr in (y, unit, X, n_i):
            arr.flags.writeable = False
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "unit", unit)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "meta", tuple(self.meta))
        object.__setattr__(self, "unit_labels", tuple(str(u) for u in self.unit_labels))
        object.__setattr__(self, "n_i", n_i)

    @classmethod
    def from_arrays(
        cls,
        y: Sequence[float],
        unit: Sequence,
        X: np.ndarray | None = None,
        names: Sequence[str] | None = None,
        kinds: dict[str, str] | None = None,
    ) -> "ClusteredDataset":
        """Build a dataset from raw arrays; ``unit`` may hold arbitrary labels."""
        if len(y) == 0:
            raise ValueError("dataset has no rows")
        labels: dict[str, int] = {}
        codes = np.empty(len(y), dtype=np.int64)
        for r, u in enumerate(unit):
            codes[r] = labels.setdefault(_label(u), len(labels))
        if X is None:
            X = np.empty((len(y), 0))
        X = np.asarray(X, dtype=float).reshape(len(y), -1)
        if names is None:
            names = [f"x{k + 1}" for k in range(X.shape[1])]
        kinds = kinds or {}
        meta = tuple(CovariateMeta.from_column(nm, X[:, k], kinds.get(nm)) for k, nm in enumerate(names))
        return cls(np.asarray(y, dtype=float), codes, X, meta, tuple(labels))

    @property
    def N(self) -> int:
        return len(self.y)

    @property
    def n(self) -> int:
        return len(self.unit_labels)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def names(self) -> list[str]:
        return [m.name for m in self.meta]

    def subset(self, rows: np.ndarray) -> "ClusteredDataset":
        """Rows ``rows`` as a new dataset; units are re-coded, labels kept."""
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        old = self.unit[rows]
        present, first, codes = np.unique(old, return_index=True, return_inverse=True)
        # keep first-appearance order within the subset
        rank = np.empty(len(present), dtype=np.int64)
        rank[np.argsort(first, kind="stable")] = np.arange(len(present))
        X = self.X[rows]
        meta = tuple(CovariateMeta.from_column(m.name, X[:, k], m.kind) for k, m in enumerate(self.meta))
        labels = [None] * len(present)
        for c, u in enumerate(present):
            labels[rank[c]] = self.unit_labels[u]
        return ClusteredDataset(self.y[rows], rank[codes], X, meta, tuple(labels))

    def codes_for(self, labels: Iterable[str]) -> np.ndarray:
        """Unit codes of ``labels``; -1 for labels unknown to this dataset."""
        index = {lab: i for i, lab in enumerate(self.unit_labels)}
        return np.array([index.get(str(lab), -1) for lab in labels], dtype=np.int64)


def _label(u) -> str:
    if isinstance(u, (float, np.floating)) and float(u).is_integer():
        return str(int(u))
    return str(u)


def _parse_number(text: str, line: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise LoadError(f"line {line}, column {column!r}: {text!r} is not numeric") from None
    if not math.isfinite(value):
        raise LoadError(f"line {line}, column {column!r}: {text!r} is not a finite number")
    return value


def load_csv(
    path: str | Path,
    outcome: str | None,
    unit: str,
    covariates: Sequence[str],
    kinds: dict[str, str] | None = None,
) -> ClusteredDataset:
    """Read a comma-separated file with a header row.

    With ``outcome=None`` the outcome is not read and set to zero (for
    prediction files). Line numbers in error messages count the header as
    line 1.
    """
    path = Path(path)
    if not path.exists():
        raise LoadError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise LoadError(f"{path}: file is empty")
        header = [h.strip() for h in header]
        wanted = [c for c in (outcome, unit, *covariates) if c is not None]
        missing = [c for c in wanted if c not in header]
        if missing:
            raise LoadError(f"{path}: missing column(s) {missing}")
        pos = {c: header.index(c) for c in wanted}
        ys, units, xs = [], [], []
        for line, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise LoadError(f"line {line}: expected {len(header)} fields, got {len(row)}")
            ys.append(0.0 if outcome is None else _parse_number(row[pos[outcome]].strip(), line, outcome))
            label = row[pos[unit]].strip()
            if not label or label.upper() in ("NA", "NAN"):
                raise LoadError(f"line {line}, column {unit!r}: missing unit label")
            units.append(label)
            xs.append([_parse_number(row[pos[c]].strip(), line, c) for c in covariates])
    if not ys:
        raise LoadError(f"{path}: no data rows")
    X = np.array(xs, dtype=float).reshape(len(ys), len(covariates))
    kinds = kinds or {}
    for name, kind in kinds.items():
        if kind not in KINDS:
            raise LoadError(f"column {name!r}: unknown kind {kind!r}")
        if kind == "binary":
            col = X[:, list(covariates).index(name)]
            if not np.all((col == 0) | (col == 1)):
                raise LoadError(f"column {name!r}: declared binary but holds values other than 0/1")
    return ClusteredDataset.from_arrays(ys, units, X, list(covariates), kinds)


def write_csv(d: ClusteredDataset, path: str | Path, outcome: str = "y", unit: str = "unit") -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([outcome, unit, *d.names])
        for r in range(d.N):
            w.writerow([repr(float(d.y[r])), d.unit_labels[d.unit[r]], *(repr(float(v)) for v in d.X[r])])


def unit_means(d: ClusteredDataset) -> np.ndarray:
    return np.bincount(d.unit, weights=d.y, minlength=d.n) / d.n_i


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    k: int
    fold: np.ndarray

    def test_rows(self, f: int) -> np.ndarray:
        return np.flatnonzero(self.fold == f)

    def train_rows(self, f: int) -> np.ndarray:
        return np.flatnonzero(self.fold != f)


def assign_folds(d: ClusteredDataset, k: int, seed: int) -> FoldAssignment:
    """Shuffle each unit's rows and deal them round-robin into ``k`` folds.

    The dealing position carries over from one unit to the next, so total
    fold sizes differ by at most one as well.
    """
    if k < 2:
        raise ValueError(f"need at least 2 folds, got {k}")
    rng = np.random.default_rng(seed)
    fold = np.empty(d.N, dtype=np.int64)
    offset = 0
    for i in range(d.n):
        rows = rng.permutation(np.flatnonzero(d.unit == i))
        fold[rows] = (offset + np.arange(len(rows))) % k
        offset = (offset + len(rows)) % k
    fold.flags.writeable = False
    return FoldAssignment(k, fold)
