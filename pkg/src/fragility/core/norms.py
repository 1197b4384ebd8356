"""Vector norms used by the transport cost and their duals."""

from __future__ import annotations

import enum

import numpy as np


class NormKind(str, enum.Enum):
    ONE = "one"
    TWO = "two"
    INF = "inf"

    @property
    def dual(self) -> "NormKind":
        return _DUALS[self]

    @classmethod
    def parse(cls, value: "str | NormKind") -> "NormKind":
        if isinstance(value, cls):
            return value
        aliases = {"1": "one", "l1": "one", "2": "two", "l2": "two",
                   "infinity": "inf", "linf": "inf", "max": "inf"}
        key = str(value).lower()
        return cls(aliases.get(key, key))


_DUALS = {NormKind.ONE: NormKind.INF, NormKind.TWO: NormKind.TWO, NormKind.INF: NormKind.ONE}
_ORD = {NormKind.ONE: 1, NormKind.TWO: 2, NormKind.INF: np.inf}


def norm(v, kind: NormKind, axis=None) -> np.ndarray | float:
    """``kind``-norm of ``v`` (along ``axis`` when given)."""
    v = np.asarray(v, dtype=float)
    return np.linalg.norm(v, ord=_ORD[NormKind.parse(kind)], axis=axis)


def dual_norm(v, kind: NormKind, axis=None) -> np.ndarray | float:
    """Dual of the ``kind``-norm: one -> max-abs, two -> Euclidean, inf -> sum-abs."""
    return norm(v, NormKind.parse(kind).dual, axis=axis)


def dual_norm_subgradient(v, kind: NormKind) -> np.ndarray:
    """One element of the subdifferential of ``dual_norm(., kind)`` at ``v``.

    At the origin the zero vector is returned.
    """
    v = np.asarray(v, dtype=float)
    d = NormKind.parse(kind).dual
    if d is NormKind.TWO:
        n = np.linalg.norm(v)
        return v / n if n > 0 else np.zeros_like(v)
    if d is NormKind.ONE:
        return np.sign(v)
    g = np.zeros_like(v)
    if np.any(v != 0):
        i = int(np.argmax(np.abs(v)))
        g[i] = np.sign(v[i])
    return g
