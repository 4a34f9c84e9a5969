"""Tabular classification data: CSV loading, stratified holdout splits and
stratified k-fold partitions.

All index sets returned here are sorted ``int64`` arrays into the rows of the
parent :class:`Dataset`. Randomness comes exclusively from the
``numpy.random.Generator`` passed in, so equal seeds give identical splits.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_flow

__all__ = [
    "Dataset",
    "DatasetError",
    "FoldSet",
    "SplitPair",
    "bundled_datasets",
    "bundled_path",
    "load_csv",
    "stratified_kfold",
    "stratified_split",
]


class DatasetError(ValueError):
    """Raised for malformed input files or infeasible partition requests."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    classes: tuple[str, ...]
    name: str = ""

    def __post_init__(self) -> None:
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels).astype(str)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DatasetError(f"features must be a non-empty 2-D matrix, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise DatasetError("labels must be a vector aligned with the feature rows")
        if not np.all(np.isfinite(X)):
            raise DatasetError("features contain non-finite values")
        if tuple(_first_appearance(y)) != tuple(self.classes):
            raise DatasetError("classes must list the distinct labels in first-appearance order")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "classes", tuple(self.classes))

    @classmethod
    def from_arrays(cls, features, labels, name: str = "") -> Dataset:
        y = np.asarray([str(v).strip() for v in labels])
        return cls(np.asarray(features, dtype=float), y, tuple(_first_appearance(y)), name)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> Dataset:
        """Rows ``indices`` as a new dataset (class inventory recomputed)."""
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset.from_arrays(self.features[idx], self.labels[idx], self.name)

    def class_counts(self) -> dict[str, int]:
        return {c: int(np.sum(self.labels == c)) for c in self.classes}


@dataclass(frozen=True)
class SplitPair:
    learning: np.ndarray
    selection: np.ndarray


@dataclass(frozen=True)
class FoldSet:
    folds: tuple[np.ndarray, ...]

    @property
    def k(self) -> int:
        return len(self.folds)

    def training_indices(self, i: int) -> np.ndarray:
        """All indices outside fold ``i``, sorted."""
        return np.sort(np.concatenate([f for j, f in enumerate(self.folds) if j != i]))


def _first_appearance(labels) -> list[str]:
    seen: dict[str, None] = {}
    for v in labels:
        seen.setdefault(str(v), None)
    return list(seen)


def load_csv(path, target_column: str, name: str | None = None) -> Dataset:
    """Read a headed, comma-separated file into a :class:`Dataset`.

    Every column except ``target_column`` must hold finite real numbers; the
    target column is read as opaque, whitespace-trimmed class tokens.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: file is empty") from None
        if target_column not in header:
            raise DatasetError(f"{path}: target column {target_column!r} not found in header {header}")
        t = header.index(target_column)
        feature_names = [h for j, h in enumerate(header) if j != t]
        if not feature_names:
            raise DatasetError(f"{path}: no feature columns besides {target_column!r}")
        rows: list[list[float]] = []
        labels: list[str] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DatasetError(f"{path}, row {lineno}: expected {len(header)} cells, got {len(row)}")
            values = []
            for j, cell in enumerate(row):
                if j == t:
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise DatasetError(
                        f"{path}, row {lineno}, column {header[j]!r}: non-numeric value {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DatasetError(f"{path}, row {lineno}, column {header[j]!r}: non-finite value {cell!r}")
                values.append(v)
            rows.append(values)
            labels.append(row[t].strip())
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    return Dataset.from_arrays(np.array(rows, dtype=float), labels, name or path.stem)


def bundled_datasets() -> list[str]:
    """Names of the CSV datasets shipped with the package."""
    root = resources.files("lexidate") / "data"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".csv"))


def bundled_path(name: str) -> Path:
    path = Path(str(resources.files("lexidate") / "data" / f"{name}.csv"))
    if not path.is_file():
        raise DatasetError(f"unknown bundled dataset {name!r}; available: {bundled_datasets()}")
    return path


def _class_members(ds: Dataset) -> list[np.ndarray]:
    return [np.flatnonzero(ds.labels == c) for c in ds.classes]


def _allocate(counts: list[int], fraction: float) -> list[int]:
    # floor per class, then hand out the remaining slots by largest
    # fractional remainder (stable on ties, so first-appearance order wins)
    exact = [fraction * c for c in counts]
    alloc = [math.floor(e) for e in exact]
    target = math.floor(fraction * sum(counts) + 0.5)
    order = sorted(range(len(counts)), key=lambda i: -(exact[i] - alloc[i]))
    for i in order[: target - sum(alloc)]:
        alloc[i] += 1
    return alloc


def stratified_split(ds: Dataset, learn_fraction: float, rng: np.random.Generator) -> SplitPair:
    """Split rows into a learning and a selection side, stratified by class.

    Each class contributes ``floor(learn_fraction * count)`` rows to the
    learning side; leftover slots needed to reach ``round(learn_fraction * n)``
    go to the classes with the largest fractional remainders.
    """
    if not 0.0 < learn_fraction < 1.0:
        raise DatasetError(f"learn_fraction must lie in (0, 1), got {learn_fraction}")
    members = _class_members(ds)
    for c, m in zip(ds.classes, members):
        if len(m) < 2:
            raise DatasetError(f"class {c!r} has {len(m)} sample(s); stratified splitting needs at least 2")
    alloc = _allocate([len(m) for m in members], learn_fraction)
    learning, selection = [], []
    for m, a in zip(members, alloc):
        shuffled = rng.permutation(m)
        learning.append(shuffled[:a])
        selection.append(shuffled[a:])
    learn = np.sort(np.concatenate(learning))
    sel = np.sort(np.concatenate(selection))
    if len(learn) == 0 or len(sel) == 0:
        raise DatasetError(f"learn_fraction {learn_fraction} leaves one side of the split empty")
    return SplitPair(learn.astype(np.int64), sel.astype(np.int64))


def _controlled_rounding(counts: list[int], sizes: list[int]) -> np.ndarray:
    """Integer class-by-part table with row sums ``counts`` and column sums
    ``sizes`` whose every entry is the floor or ceiling of its proportional
    target ``count * size / n``.

    Start from the floors and route the missing units through a bipartite
    max-flow (class -> part, capacity 1 where the target is fractional).
    """
    n = sum(counts)
    table = np.array([[c * s // n for s in sizes] for c in counts], dtype=np.int64)
    fractional = np.array([[(c * s) % n != 0 for s in sizes] for c in counts])
    row_need = np.array(counts) - table.sum(axis=1)
    col_need = np.array(sizes) - table.sum(axis=0)
    n_rows, n_cols = table.shape
    source, sink = n_rows + n_cols, n_rows + n_cols + 1
    cap = np.zeros((n_rows + n_cols + 2,) * 2, dtype=np.int32)
    cap[source, :n_rows] = row_need
    cap[:n_rows, n_rows:n_rows + n_cols] = fractional
    cap[n_rows:n_rows + n_cols, sink] = col_need
    flow = maximum_flow(csr_matrix(cap), source, sink)
    if flow.flow_value != row_need.sum():
        raise DatasetError("no stratified allocation exists")  # pragma: no cover
    table += flow.flow.toarray()[:n_rows, n_rows:n_rows + n_cols]
    return table


def stratified_kfold(ds: Dataset, k: int, rng: np.random.Generator) -> FoldSet:
    """Partition rows into ``k`` stratified folds.

    A random subset of ``n mod k`` folds gets one extra row. Per class and
    fold, the number of members is the floor or ceiling of
    ``count(class) * |fold| / n``; members are drawn after shuffling each
    class.
    """
    n = ds.n_samples
    if not isinstance(k, (int, np.integer)) or not 2 <= k <= n:
        raise DatasetError(f"k must be an integer in [2, {n}], got {k}")
    members = _class_members(ds)
    for c, m in zip(ds.classes, members):
        if len(m) < k:
            raise DatasetError(f"class {c!r} has {len(m)} sample(s); {k}-fold stratification needs at least {k}")
    sizes = np.full(k, n // k)
    sizes[rng.permutation(k)[: n % k]] += 1
    # random fold order in the flow network, so surplus cells are not biased
    # toward low fold indices
    perm = rng.permutation(k)
    table = _controlled_rounding([len(m) for m in members], sizes[perm].tolist())
    table = table[:, np.argsort(perm)]
    parts: list[list[np.ndarray]] = [[] for _ in range(k)]
    for m, row in zip(members, table):
        shuffled = rng.permutation(m)
        for f, chunk in enumerate(np.split(shuffled, np.cumsum(row)[:-1])):
            parts[f].append(chunk)
    return FoldSet(tuple(np.sort(np.concatenate(p)).astype(np.int64) for p in parts))
