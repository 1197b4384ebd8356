"""Datasets, feature maps and linear score models."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from math import comb

import numpy as np

from .norms import NormKind


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Raw features ``(N, D)`` with 0-based integer labels in ``[0, class_count)``."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        x = _frozen(self.features)
        if x.ndim == 1:
            x = _frozen(x.reshape(-1, 1))
        y = _frozen(self.labels, dtype=np.int64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("features must be a non-empty (N, D) matrix")
        if y.shape != (x.shape[0],):
            raise ValueError(f"expected {x.shape[0]} labels, got shape {y.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain non-finite entries")
        if self.class_count < 1 or y.min() < 0 or y.max() >= self.class_count:
            raise ValueError(f"labels must lie in [0, {self.class_count})")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.features[index], self.labels[index], self.class_count)

    def with_labels(self, labels) -> "Dataset":
        return Dataset(self.features, labels, self.class_count)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)


@dataclass(frozen=True)
class FeatureMap:
    """Explicit feature map: ``identity`` or total-degree ``polynomial``.

    Polynomial features are ordered by total degree; within a degree, pure
    powers come before mixed terms, so degree 2 on ``(x1, x2)`` gives
    ``(1, x1, x2, x1^2, x2^2, x1*x2)``.
    """

    kind: str = "identity"
    degree: int = 1

    def __post_init__(self):
        if self.kind not in ("identity", "polynomial"):
            raise ValueError(f"unknown feature map kind {self.kind!r}")
        if self.degree < 1:
            raise ValueError("polynomial degree must be >= 1")

    def output_dim(self, input_dim: int) -> int:
        if self.kind == "identity":
            return input_dim
        return comb(input_dim + self.degree, self.degree)

    def monomials(self, input_dim: int) -> list[tuple[int, ...]]:
        terms: list[tuple[int, ...]] = [()]
        for t in range(1, self.degree + 1):
            block = list(itertools.combinations_with_replacement(range(input_dim), t))
            block.sort(key=lambda m: len(set(m)))  # stable: pure powers first
            terms.extend(block)
        return terms

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite input to feature map")
        if self.kind == "identity":
            out = X.copy()
        else:
            cols = [np.prod(X[:, list(m)], axis=1) if m else np.ones(X.shape[0])
                    for m in self.monomials(X.shape[1])]
            out = np.column_stack(cols)
        return out[0] if single else out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "degree": self.degree}

    @classmethod
    def from_dict(cls, d: dict | None) -> "FeatureMap":
        if not d:
            return cls()
        return cls(kind=d.get("kind", "identity"), degree=int(d.get("degree", 1)))


def apply_feature_map(x, fmap: FeatureMap, expected_dim: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if expected_dim is not None and x.shape[-1] != expected_dim:
        raise ValueError(f"input has dimension {x.shape[-1]}, expected {expected_dim}")
    return fmap(x)


@dataclass(frozen=True, eq=False)
class ScoreModel:
    """Score matrix ``B`` of shape ``(M, C)``; column ``j`` scores class ``j``."""

    weights: np.ndarray
    feature_map: FeatureMap = field(default_factory=FeatureMap)
    norm: NormKind = NormKind.TWO

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.ndim != 2:
            raise ValueError("weights must be an (M, C) matrix")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "norm", NormKind.parse(self.norm))

    @property
    def class_count(self) -> int:
        return self.weights.shape[1]

    def featurize(self, X) -> np.ndarray:
        return self.feature_map(np.atleast_2d(np.asarray(X, dtype=float)))

    def scores(self, X) -> np.ndarray:
        return self.featurize(X) @ self.weights

    def predict(self, X) -> np.ndarray:
        return argmax_lowest(self.scores(X))

    @cached_property
    def max_pairwise_dual_gap(self) -> float:
        return max_pairwise_dual_norm(self.weights, self.norm)


def argmax_lowest(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    if not np.all(np.isfinite(s)):
        raise FloatingPointError("non-finite score")
    return np.argmax(s, axis=-1)  # numpy returns the first maximum


def predict(model: ScoreModel | np.ndarray, phi) -> int:
    """Class index of a single transformed feature vector ``phi``."""
    B = model.weights if isinstance(model, ScoreModel) else np.asarray(model, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (B.shape[0],):
        raise ValueError(f"phi has shape {phi.shape}, expected ({B.shape[0]},)")
    return int(argmax_lowest(phi @ B))


def pairwise_differences(B) -> tuple[list[tuple[int, int]], np.ndarray]:
    """All ``beta_i - beta_j`` for ``i < j`` as rows of an ``(P, M)`` array."""
    B = np.asarray(B, dtype=float)
    pairs = list(itertools.combinations(range(B.shape[1]), 2))
    if not pairs:
        return pairs, np.zeros((0, B.shape[0]))
    i, j = np.array(pairs).T
    return pairs, (B[:, i] - B[:, j]).T


def max_pairwise_dual_norm(B, kind: NormKind) -> float:
    from .norms import dual_norm

    _, D = pairwise_differences(B)
    if D.shape[0] == 0:
        return 0.0
    return float(np.max(dual_norm(D, kind, axis=1)))
