"""Shared data model: datasets, feature statistics, model interface, RNG.

Everything downstream (surrogate training, explainers, plots) works on the
types defined here.  Datasets and fitted models are immutable after
construction; RandomStream is the only stateful object and is never shared
between workers (see :func:`child_seed`).
"""
from __future__ import annotations

import csv
import hashlib
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CLASSIFICATION = "classification"
REGRESSION = "regression"


class LimaseError(Exception):
    """Base class for errors raised by this package."""


class DataError(LimaseError):
    """Invalid dataset or data file (bad CSV cell, missing column, ...)."""


class ConfigError(LimaseError):
    """Invalid configuration or usage (rejected before any work starts)."""


@dataclass(frozen=True)
class Task:
    """Prediction task kind; classification carries its class count."""

    kind: str
    n_classes: int | None = None

    def __post_init__(self):
        if self.kind not in (CLASSIFICATION, REGRESSION):
            raise ConfigError(f"unknown task kind: {self.kind!r}")
        if self.kind == CLASSIFICATION:
            if self.n_classes is None or self.n_classes < 2:
                raise ConfigError("classification requires n_classes >= 2")
        elif self.n_classes is not None:
            raise ConfigError("regression takes no n_classes")

    @property
    def is_classification(self) -> bool:
        return self.kind == CLASSIFICATION

    @property
    def n_outputs(self) -> int:
        return self.n_classes if self.kind == CLASSIFICATION else 1

    @staticmethod
    def classification(n_classes: int) -> "Task":
        return Task(CLASSIFICATION, n_classes)

    @staticmethod
    def regression() -> "Task":
        return Task(REGRESSION)


@dataclass(frozen=True)
class FeatureMeta:
    """Per-feature statistics.  std is the population (divide-by-n) value."""

    name: str
    index: int
    mean: float
    std: float
    min: float
    max: float


def compute_feature_meta(rows: np.ndarray, names: list[str]) -> list[FeatureMeta]:
    """Population statistics per column of a non-empty row matrix."""
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2:
        raise DataError("rows must be a 2-d matrix")
    if rows.shape[1] != len(names):
        raise DataError(f"{len(names)} names for {rows.shape[1]} columns")
    means = rows.mean(axis=0)
    stds = rows.std(axis=0)  # ddof=0: population std
    mins = rows.min(axis=0)
    maxs = rows.max(axis=0)
    return [
        FeatureMeta(name, j, float(means[j]), float(stds[j]), float(mins[j]), float(maxs[j]))
        for j, name in enumerate(names)
    ]


@dataclass(frozen=True)
class Dataset:
    """Rectangular numeric feature matrix with target and per-feature stats."""

    features: list[FeatureMeta]
    rows: np.ndarray  # (n, d) float64
    target: np.ndarray  # (n,) float64
    task: Task

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    @property
    def feature_names(self) -> list[str]:
        return [f.name for f in self.features]

    def validate(self) -> None:
        """Check the type invariants; raises DataError on violation."""
        if self.rows.ndim != 2 or self.target.ndim != 1:
            raise DataError("rows must be 2-d and target 1-d")
        if self.rows.shape[0] != self.target.shape[0]:
            raise DataError("rows/target length mismatch")
        if not np.all(np.isfinite(self.rows)) or not np.all(np.isfinite(self.target)):
            raise DataError("non-finite values in dataset")
        if len(self.features) != self.d:
            raise DataError("feature metadata count != column count")
        for j, f in enumerate(self.features):
            if f.index != j:
                raise DataError("feature indices must be 0..d-1 in order")
        recomputed = compute_feature_meta(self.rows, self.feature_names)
        for have, want in zip(self.features, recomputed):
            for field in ("mean", "std", "min", "max"):
                if abs(getattr(have, field) - getattr(want, field)) > 1e-9:
                    raise DataError(f"stale statistics for feature {have.name!r} ({field})")
        if self.task.is_classification:
            k = self.task.n_classes
            if not np.all(self.target == np.round(self.target)):
                raise DataError("classification targets must be integral")
            if self.target.size and (self.target.min() < 0 or self.target.max() >= k):
                raise DataError(f"class labels must lie in [0, {k})")


@dataclass(frozen=True)
class ModelOutput:
    """Batched model predictions: (n, k) with k=1 for regression."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.atleast_2d(np.asarray(self.values, dtype=float)))

    def scalar(self) -> np.ndarray:
        """Regression convenience: the single output column as a vector."""
        if self.values.shape[1] != 1:
            raise ValueError("scalar() requires a single-output model")
        return self.values[:, 0]

    def check_probabilities(self, atol: float = 1e-6) -> None:
        v = self.values
        if v.min() < -atol or v.max() > 1 + atol:
            raise ValueError("probabilities outside [0, 1]")
        if not np.allclose(v.sum(axis=1), 1.0, atol=atol):
            raise ValueError("probability rows must sum to 1")


class BlackBoxModel(ABC):
    """A pure prediction function over row batches.

    Purity (identical batch in, identical output out) is required: the
    explainers compare repeated queries and derive oracles from it.
    """

    task: Task
    d: int

    @abstractmethod
    def predict(self, X: np.ndarray) -> ModelOutput:
        """Predict a batch; X has shape (n, d)."""

    def predict_scalar(self, X: np.ndarray, class_index: int | None = None) -> np.ndarray:
        """Scalar view of the output: regression value or one class probability."""
        out = self.predict(X)
        if self.task.is_classification:
            if class_index is None:
                raise ValueError("class_index required for classification models")
            if not 0 <= class_index < self.task.n_classes:
                raise ValueError(f"class_index {class_index} out of range")
            return out.values[:, class_index]
        if class_index is not None:
            raise ValueError("class_index given for a regression model")
        return out.values[:, 0]


def child_seed(seed: int, index: int) -> int:
    """Derive a worker seed from a parent seed: stable across platforms.

    Uses SHA-256 of "seed:index" so parallel fan-out never reuses a stream.
    """
    digest = hashlib.sha256(f"{seed}:{index}".encode("ascii")).digest()
    return int.from_bytes(digest[:8], "little")


class RandomStream:
    """Deterministic random source: PCG64 with an explicit 64-bit seed.

    The draw sequence is a pure function of the seed; drawing n values in
    one call or several yields the same sequence.  Never share a stream
    between workers; use :meth:`child` to split.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, index: int) -> "RandomStream":
        return RandomStream(child_seed(self.seed, index))

    def normal(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("n must be non-negative")
        return self._gen.standard_normal(n)

    def normal_matrix(self, n: int, d: int) -> np.ndarray:
        return self._gen.standard_normal((n, d))

    def integers(self, low: int, high: int, size: int) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def uniform(self, n: int) -> np.ndarray:
        return self._gen.random(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def shuffle(self, x: np.ndarray) -> None:
        self._gen.shuffle(x)


def draw_gaussian(rng: RandomStream, n: int) -> np.ndarray:
    """n i.i.d. standard-normal draws from the stream."""
    return rng.normal(n)


def standardize(x: np.ndarray, features: list[FeatureMeta]) -> np.ndarray:
    """Center/scale a row by the dataset statistics; std=0 coordinates map to 0."""
    x = np.asarray(x, dtype=float)
    if x.shape != (len(features),):
        raise ValueError(f"expected a row of length {len(features)}, got shape {x.shape}")
    mean = np.array([f.mean for f in features])
    std = np.array([f.std for f in features])
    out = np.zeros_like(x)
    nz = std > 0
    out[nz] = (x[nz] - mean[nz]) / std[nz]
    return out


def _parse_cell(raw: str, row: int, col: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise DataError(f"non-numeric cell at row {row}, column {col!r}: {raw!r}") from None
    if not np.isfinite(value):
        raise DataError(f"non-finite cell at row {row}, column {col!r}: {raw!r}")
    return value


def load_csv(path: str | Path, target_column: str, task: Task | str) -> Dataset:
    """Load a UTF-8 comma-separated file with a header row into a Dataset.

    All non-target columns must parse as finite numbers; row order is
    preserved.  `task` may be a Task or the strings "classification" /
    "regression"; for the former string the class count is inferred from
    the labels.
    """
    infer_classes = False
    if isinstance(task, str):
        if task == REGRESSION:
            task = Task.regression()
        elif task == CLASSIFICATION:
            infer_classes = True
        else:
            raise ConfigError(f"unknown task kind: {task!r}")
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"empty file: {path}") from None
        if target_column not in header:
            raise DataError(f"missing target column {target_column!r} in {path}")
        t_idx = header.index(target_column)
        names = [h for i, h in enumerate(header) if i != t_idx]
        rows: list[list[float]] = []
        target: list[float] = []
        for r, record in enumerate(reader, start=1):
            if len(record) != len(header):
                raise DataError(f"row {r} has {len(record)} cells, expected {len(header)}")
            target.append(_parse_cell(record[t_idx], r, target_column))
            rows.append([_parse_cell(c, r, header[i if i < t_idx else i + 1])
                         for i, c in enumerate(record[:t_idx] + record[t_idx + 1:])])
    if not rows:
        raise DataError(f"no data rows in {path}")
    X = np.array(rows, dtype=float)
    y = np.array(target, dtype=float)
    if infer_classes or (isinstance(task, Task) and task.is_classification):
        if not np.all(y == np.round(y)):
            raise DataError("classification target has non-integral labels")
        if infer_classes:
            task = Task.classification(int(y.max()) + 1)
    ds = Dataset(compute_feature_meta(X, names), X, y, task)
    ds.validate()
    return ds


def write_csv(dataset: Dataset, path: str | Path, target_column: str = "target") -> None:
    """Write a Dataset back to CSV with shortest round-trip float formatting."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(dataset.feature_names + [target_column])
        for x, y in zip(dataset.rows, dataset.target):
            writer.writerow([repr(float(v)) for v in x] + [repr(float(y))])


def dataset_summary(dataset: Dataset) -> dict:
    """JSON-ready summary of shape, task and per-feature statistics."""
    return {
        "n_rows": dataset.n,
        "n_features": dataset.d,
        "task": dataset.task.kind,
        "n_classes": dataset.task.n_classes,
        "features": [
            {"name": f.name, "index": f.index, "mean": f.mean, "std": f.std,
             "min": f.min, "max": f.max}
            for f in dataset.features
        ],
    }
