"""Datasets, label encoding and separability predicates.

A dataset is a data matrix X (rows are samples) with either binary labels
y in {+1,-1}^N (K == 0) or multiclass labels in {1..K}^N (K >= 1).  The three
built-in reference datasets used throughout the test suite and CLI are
registered in BUILTIN_DATASETS.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray           # (N, d)
    labels: np.ndarray      # (N,) ints: {+1,-1} binary or {1..K} multiclass
    name: str = ""
    K: int = 0              # 0 means binary +/-1 labels

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "labels", labels)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError("X must be a nonempty N x d matrix")
        if not np.isfinite(X).all():
            raise ValueError("X contains non-finite entries")
        if labels.shape != (X.shape[0],):
            raise ValueError("label count does not match sample count")
        if self.K == 0:
            if not np.all(np.isin(labels, (-1, 1))):
                raise ValueError("binary labels must be +1 or -1")
        else:
            if self.K < 1:
                raise ValueError("K must be >= 1 for multiclass labels")
            if labels.min() < 1 or labels.max() > self.K:
                raise ValueError("label out of range 1..K")

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def is_binary(self) -> bool:
        return self.K == 0

    @property
    def y(self) -> np.ndarray:
        """Binary +/-1 label vector (binary datasets only)."""
        if not self.is_binary:
            raise ValueError("dataset has multiclass labels; use encode_labels")
        return self.labels.astype(float)


@dataclass(frozen=True)
class EncodedLabels:
    """N x K matrix with entries +/-1 and exactly one +1 per row."""

    Y: np.ndarray

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float)
        object.__setattr__(self, "Y", Y)
        if Y.ndim != 2 or not np.all(np.isin(Y, (-1.0, 1.0))):
            raise ValueError("encoded labels must be an N x K +/-1 matrix")
        if not np.all(np.sum(Y == 1.0, axis=1) == 1):
            raise ValueError("each row must have exactly one +1")

    def column(self, k: int) -> np.ndarray:
        """Binary label vector y_k of the k-th one-vs-all subproblem (0-based)."""
        return self.Y[:, k].copy()


@dataclass(frozen=True)
class SeparabilityReport:
    separable: bool
    witness: tuple[int, int] | None = None   # offending pair (0-based)
    reason: str = ""                          # which inequality failed


BUILTIN_DATASETS: dict[str, Dataset] = {
    "notebook": Dataset(
        X=np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 1.0]]),
        labels=np.array([1, -1, -1]), name="notebook"),
    "appendix-ortho": Dataset(
        X=np.array([[1.65, -0.47], [-0.47, 1.35]]),
        labels=np.array([1, -1]), name="appendix-ortho"),
    "appendix-nonspikefree": Dataset(
        X=np.array([[1.65, 0.47], [0.47, 1.35]]),
        labels=np.array([1, 1]), name="appendix-nonspikefree"),
}


def builtin_dataset(name: str) -> Dataset:
    try:
        return BUILTIN_DATASETS[name]
    except KeyError:
        raise KeyError(f"unknown built-in dataset {name!r}; "
                       f"available: {sorted(BUILTIN_DATASETS)}") from None


def load_dataset(source: str | Path | dict) -> Dataset:
    """Build a Dataset from a JSON file path or an already-parsed dict.

    Schema: {"name": str, "X": [[float;d];N], "y": [int;N],
             "K": int (optional, 0 = binary +/-1)}.
    """
    if isinstance(source, (str, Path)):
        try:
            spec = json.loads(Path(source).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValueError(f"cannot parse dataset source: {exc}") from exc
    elif isinstance(source, dict):
        spec = source
    else:
        raise ValueError(f"unsupported dataset source type {type(source)}")
    if "X" not in spec or "y" not in spec:
        raise ValueError("dataset spec needs 'X' and 'y'")
    return Dataset(X=np.asarray(spec["X"], dtype=float),
                   labels=np.asarray(spec["y"], dtype=int),
                   name=str(spec.get("name", "")),
                   K=int(spec.get("K", 0)))


def dataset_to_json(ds: Dataset) -> dict:
    return {"name": ds.name, "X": ds.X.tolist(),
            "y": ds.labels.tolist(), "K": ds.K}


def encode_labels(labels: np.ndarray, K: int) -> EncodedLabels:
    """One-vs-all +/-1 encoding: Y[n, k] = +1 iff label_n == k+1."""
    labels = np.asarray(labels, dtype=int)
    if K < 1:
        raise ValueError("K must be >= 1")
    if labels.min() < 1 or labels.max() > K:
        raise ValueError("label out of range 1..K")
    Y = -np.ones((labels.shape[0], K))
    Y[np.arange(labels.shape[0]), labels - 1] = 1.0
    return EncodedLabels(Y=Y)


def _pair_scan(X: np.ndarray, same_class: np.ndarray) -> SeparabilityReport:
    N = X.shape[0]
    norms = np.linalg.norm(X, axis=1)
    for n in range(N):
        if norms[n] == 0.0:
            return SeparabilityReport(False, (n, n), "zero row")
    G = X @ X.T
    for n in range(N):
        for n2 in range(n + 1, N):
            if same_class[n, n2]:
                if G[n, n2] <= 0.0:
                    return SeparabilityReport(
                        False, (n, n2), "same-label inner product <= 0")
            elif G[n, n2] > 0.0:
                return SeparabilityReport(
                    False, (n, n2), "cross-label inner product > 0")
    return SeparabilityReport(True)


def is_orthogonal_separable(ds: Dataset) -> SeparabilityReport:
    """Same-label pairs must have positive inner products, cross-label pairs
    nonpositive.  Zero rows fail (the same-label strict inequality cannot
    hold against themselves)."""
    if not ds.is_binary:
        raise ValueError("binary labels required; "
                         "use is_orthogonal_separable_multiclass")
    same = ds.labels[:, None] == ds.labels[None, :]
    return _pair_scan(ds.X, same)


def is_orthogonal_separable_multiclass(ds: Dataset) -> SeparabilityReport:
    """Multiclass variant: label equality replaces sign equality."""
    if ds.is_binary:
        raise ValueError("multiclass labels required")
    same = ds.labels[:, None] == ds.labels[None, :]
    return _pair_scan(ds.X, same)


def x_max(ds: Dataset) -> float:
    """Largest sample 2-norm."""
    return float(np.max(np.linalg.norm(ds.X, axis=1)))
