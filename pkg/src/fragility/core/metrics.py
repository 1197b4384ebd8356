"""Ranking errors, AUC and accuracy."""

from __future__ import annotations

from functools import cached_property

import numpy as np
from scipy.special import logsumexp
from scipy.stats import rankdata


def _logmeanexp(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(logsumexp(a) - np.log(a.size))


class ErrorSample:
    """Error values ``eps`` with an attached target ``tau``.

    Built either from explicit values or, for ranking errors, from positive and
    negative scores. The pairwise form never materializes all ``m+ * m-``
    differences unless ``values`` is requested: every statistic FI needs
    factorizes over the two score sets.
    """

    def __init__(self, values=None, target: float = 0.0, kind: str = "loss", *, _pairs=None):
        self.target = float(target)
        self.kind = kind
        if not np.isfinite(self.target):
            raise ValueError("target must be finite")
        if _pairs is not None:
            pos, neg = _pairs
            self._pos, self._neg, self._values = pos, neg, None
            return
        v = np.array(values, dtype=float).ravel()
        if v.size == 0:
            raise ValueError("error sample is empty")
        if not np.all(np.isfinite(v)):
            raise ValueError("error sample contains non-finite values")
        v.setflags(write=False)
        self._values, self._pos, self._neg = v, None, None

    @classmethod
    def from_scores(cls, pos_scores, neg_scores, target: float = 0.0) -> "ErrorSample":
        pos = np.array(pos_scores, dtype=float).ravel()
        neg = np.array(neg_scores, dtype=float).ravel()
        if pos.size == 0 or neg.size == 0:
            raise ValueError("ranking errors need at least one positive and one negative score")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
            raise ValueError("scores must be finite")
        pos.setflags(write=False)
        neg.setflags(write=False)
        return cls(target=target, kind="ranking", _pairs=(pos, neg))

    @property
    def is_pairwise(self) -> bool:
        return self._values is None

    @property
    def size(self) -> int:
        if self.is_pairwise:
            return self._pos.size * self._neg.size
        return self._values.size

    @cached_property
    def values(self) -> np.ndarray:
        if not self.is_pairwise:
            return self._values
        v = (self._neg[None, :] - self._pos[:, None]).ravel()  # pos outer, neg inner
        v.setflags(write=False)
        return v

    def max(self) -> float:
        if self.is_pairwise:
            return float(self._neg.max() - self._pos.min())
        return float(self._values.max())

    def min(self) -> float:
        if self.is_pairwise:
            return float(self._neg.min() - self._pos.max())
        return float(self._values.min())

    def mean(self) -> float:
        if self.is_pairwise:
            return float(self._neg.mean() - self._pos.mean())
        return float(self._values.mean())

    def log_mean_exp(self, s: float) -> float:
        """``log mean exp(s * eps)``."""
        if self.is_pairwise:
            return _logmeanexp(s * self._neg) + _logmeanexp(-s * self._pos)
        return _logmeanexp(s * self._values)

    def tail_fraction(self, theta) -> np.ndarray | float:
        """Empirical ``P(eps >= theta)``, vectorized over ``theta``."""
        th = np.asarray(theta, dtype=float)
        if self.is_pairwise:
            neg, pos = np.sort(self._neg), self._pos
            # count (p, n) with fl(n - p) >= theta; n >= theta + p only agrees
            # outside a rounding window, which is resolved explicitly
            q = th[..., None] + pos
            delta = 8 * np.finfo(float).eps * (np.abs(th)[..., None] + np.abs(pos) + np.abs(neg).max())
            lo = np.searchsorted(neg, q - delta, side="left")
            hi = np.searchsorted(neg, q + delta, side="right")
            cnt = neg.size - hi
            for idx in zip(*np.nonzero(hi > lo)):
                p = pos[idx[-1]]
                t = th[idx[:-1]] if th.ndim else th
                cnt[idx] += int(np.sum(neg[lo[idx]:hi[idx]] - p >= t))
            out = cnt.sum(axis=-1) / self.size
        else:
            v = np.sort(self._values)
            out = (v.size - np.searchsorted(v, th, side="left")) / v.size
        return float(out) if np.ndim(out) == 0 else out

    def with_target(self, target: float) -> "ErrorSample":
        if self.is_pairwise:
            return ErrorSample(target=target, kind=self.kind, _pairs=(self._pos, self._neg))
        return ErrorSample(self._values, target, self.kind)

    def shifted(self, c: float) -> "ErrorSample":
        """Sample of ``eps - c`` with target ``tau - c``."""
        if self.is_pairwise:
            return ErrorSample(target=self.target - c, kind=self.kind,
                               _pairs=(self._pos + c, self._neg))
        return ErrorSample(self._values - c, self.target - c, self.kind)

    def scaled(self, a: float) -> "ErrorSample":
        if a <= 0:
            raise ValueError("scale must be positive")
        if self.is_pairwise:
            return ErrorSample(target=a * self.target, kind=self.kind,
                               _pairs=(a * self._pos, a * self._neg))
        return ErrorSample(a * self._values, a * self.target, self.kind)

    def __len__(self) -> int:
        return self.size

    def __repr__(self) -> str:
        return f"ErrorSample(kind={self.kind!r}, size={self.size}, target={self.target})"


def ranking_errors(pos_scores, neg_scores, target: float = 0.0) -> ErrorSample:
    """Pairwise ``h(x-) - h(x+)``; ``.values`` lists them with positives outer."""
    return ErrorSample.from_scores(pos_scores, neg_scores, target)


def auc(pos_scores, neg_scores) -> float:
    """Mann-Whitney AUC; tied pairs count one half."""
    pos = np.asarray(pos_scores, dtype=float).ravel()
    neg = np.asarray(neg_scores, dtype=float).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUC needs both positive and negative scores")
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def accuracy(model, dataset) -> float:
    return float(np.mean(model.predict(dataset.features) == dataset.labels))


def threshold_accuracy(pos_scores, neg_scores, threshold: float = 0.5) -> float:
    """Accuracy of the rule ``score >= threshold`` on a single probability-like score."""
    pos = np.asarray(pos_scores, dtype=float)
    neg = np.asarray(neg_scores, dtype=float)
    hits = np.sum(pos >= threshold) + np.sum(neg < threshold)
    return float(hits / (pos.size + neg.size))


def class_scores(scores) -> np.ndarray:
    """One-vs-rest score per class: own score minus the best competitor.

    For two classes, column 1 is ``(beta_1 - beta_0)^T phi``.
    """
    S = np.asarray(scores, dtype=float)
    C = S.shape[1]
    if C == 1:
        return S.copy()
    out = np.empty_like(S)
    for j in range(C):
        out[:, j] = S[:, j] - np.max(np.delete(S, j, axis=1), axis=1)
    return out


def one_vs_rest_errors(scores, labels, target: float = 0.0) -> list[ErrorSample]:
    """Ranking-error samples per class from an ``(N, C)`` score matrix.

    Classes absent from ``labels`` (or covering all of it) are skipped.
    """
    S = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    out = []
    for j in range(S.shape[1]):
        mask = labels == j
        if mask.all() or not mask.any():
            continue
        out.append(ranking_errors(S[mask, j], S[~mask, j], target))
    return out


def multiclass_auc(scores, labels) -> float:
    """Mean one-vs-rest AUC (binary: AUC of the class-1 score)."""
    S = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if S.shape[1] == 2:
        return auc(S[labels == 1, 1], S[labels == 0, 1])
    vals = [auc(S[labels == j, j], S[labels != j, j])
            for j in range(S.shape[1]) if 0 < np.sum(labels == j) < labels.size]
    return float(np.mean(vals))
