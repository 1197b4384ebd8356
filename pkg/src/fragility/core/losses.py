"""Per-sample classification losses, their subgradients and regularizers.

Multiclass hinge-type losses take the worst competing class,
``max_{c != y} rho((beta_y - beta_c)^T phi)``, where ``rho`` is a convex,
nonincreasing margin penalty with derivative in ``[-theta, 0]``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax


class LossName(str, enum.Enum):
    HINGE = "hinge"
    SMOOTHED_HINGE = "smoothed_hinge"
    LOGISTIC = "logistic"
    CROSS_ENTROPY = "cross_entropy"


@dataclass(frozen=True)
class LossKind:
    name: LossName = LossName.HINGE
    smoothing: float = 0.1

    def __post_init__(self):
        name = self.name
        if isinstance(name, str) and not isinstance(name, LossName):
            alias = {"logistic_margin": "logistic", "ce": "cross_entropy",
                     "smoothed": "smoothed_hinge"}.get(name, name)
            name = LossName(alias)
        object.__setattr__(self, "name", name)
        if not (0 < self.smoothing <= 1):
            raise ValueError("smoothing width must lie in (0, 1]")

    @property
    def is_hinge_type(self) -> bool:
        return self.name is not LossName.CROSS_ENTROPY

    @property
    def theta(self) -> float:
        """Bound on ``|rho'|``; all margin penalties here have slope in [-1, 0]."""
        return 1.0

    @property
    def is_smooth(self) -> bool:
        return self.name is not LossName.HINGE

    def rho(self, m: np.ndarray) -> np.ndarray:
        m = np.asarray(m, dtype=float)
        if self.name is LossName.HINGE:
            return np.maximum(0.0, 1.0 - m)
        if self.name is LossName.SMOOTHED_HINGE:
            d = self.smoothing
            u = 1.0 - m
            return np.where(u <= 0, 0.0, np.where(u < d, u * u / (2 * d), u - d / 2))
        if self.name is LossName.LOGISTIC:
            return np.logaddexp(0.0, -m)
        raise ValueError("cross-entropy has no margin penalty")

    def rho_prime(self, m: np.ndarray) -> np.ndarray:
        """A derivative (right-continuous choice at kinks) of ``rho``."""
        m = np.asarray(m, dtype=float)
        if self.name is LossName.HINGE:
            return np.where(m < 1.0, -1.0, 0.0)
        if self.name is LossName.SMOOTHED_HINGE:
            u = 1.0 - m
            return -np.clip(u / self.smoothing, 0.0, 1.0)
        if self.name is LossName.LOGISTIC:
            return -_sigmoid(-m)
        raise ValueError("cross-entropy has no margin penalty")

    def to_dict(self) -> dict:
        return {"name": self.name.value, "smoothing": self.smoothing}

    @classmethod
    def from_dict(cls, d) -> "LossKind":
        if isinstance(d, str):
            return cls(d)
        return cls(d.get("name", "hinge"), float(d.get("smoothing", 0.1)))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


@dataclass(frozen=True)
class Regularizer:
    kind: str = "none"
    alpha: float = 0.0

    def __post_init__(self):
        k = str(self.kind).lower()
        if k not in ("none", "l1", "l2"):
            raise ValueError(f"unknown regularizer {self.kind!r}")
        if self.alpha < 0:
            raise ValueError("regularization coefficient must be >= 0")
        object.__setattr__(self, "kind", k)

    @property
    def active(self) -> bool:
        return self.kind != "none" and self.alpha > 0

    def value(self, B) -> float:
        B = np.asarray(B, dtype=float)
        if not self.active:
            return 0.0
        if self.kind == "l1":
            return float(self.alpha * np.abs(B).sum())
        return float(self.alpha * np.sum(B * B))

    def gradient(self, B) -> np.ndarray:
        B = np.asarray(B, dtype=float)
        if not self.active:
            return np.zeros_like(B)
        if self.kind == "l1":
            return self.alpha * np.sign(B)
        return 2.0 * self.alpha * B

    def to_dict(self) -> dict:
        return {"kind": self.kind, "alpha": self.alpha}

    @classmethod
    def from_dict(cls, d) -> "Regularizer":
        if not d:
            return cls()
        return cls(d.get("kind", "none"), float(d.get("alpha", 0.0)))


def margins(B, Phi, y) -> np.ndarray:
    """``(N, C)`` array of ``(beta_y - beta_c)^T phi``; the true-class entry is +inf."""
    S = np.asarray(Phi, dtype=float) @ np.asarray(B, dtype=float)
    y = np.asarray(y)
    idx = np.arange(S.shape[0])
    Mg = S[idx, y][:, None] - S
    Mg[idx, y] = np.inf
    return Mg


def losses(kind: LossKind, B, Phi, y) -> np.ndarray:
    """Per-sample losses of ``B`` on rows of ``Phi`` with labels ``y``."""
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    B = np.asarray(B, dtype=float)
    y = np.atleast_1d(np.asarray(y))
    if Phi.shape[1] != B.shape[0]:
        raise ValueError(f"feature dimension {Phi.shape[1]} does not match weights {B.shape}")
    if kind.name is LossName.CROSS_ENTROPY:
        S = Phi @ B
        return logsumexp(S, axis=1) - S[np.arange(len(y)), y]
    if B.shape[1] < 2:
        return np.asarray(kind.rho(np.full(len(y), np.inf)), dtype=float)
    worst = np.min(margins(B, Phi, y), axis=1)
    return kind.rho(worst)


def loss_grad(kind: LossKind, B, Phi, y, weights=None) -> np.ndarray:
    """Subgradient of ``sum_n w_n loss_n(B)``; uniform ``1/N`` weights by default."""
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    B = np.asarray(B, dtype=float)
    y = np.atleast_1d(np.asarray(y))
    N, C = Phi.shape[0], B.shape[1]
    w = np.full(N, 1.0 / N) if weights is None else np.asarray(weights, dtype=float)
    idx = np.arange(N)
    if kind.name is LossName.CROSS_ENTROPY:
        P = softmax(Phi @ B, axis=1)
        P[idx, y] -= 1.0
        return Phi.T @ (w[:, None] * P)
    if C < 2:
        return np.zeros_like(B)
    Mg = margins(B, Phi, y)
    c = np.argmin(Mg, axis=1)  # lowest index among worst competitors
    d = kind.rho_prime(Mg[idx, c]) * w
    # d/dB of rho(phi^T (beta_y - beta_c)): d * phi on column y, -d * phi on column c
    G = np.zeros((N, C))
    G[idx, y] += d
    G[idx, c] -= d
    return Phi.T @ G


def loss_value(kind: LossKind, B, phi, y: int) -> float:
    return float(losses(kind, B, np.asarray(phi, dtype=float)[None, :], [y])[0])


def loss_subgradient(kind: LossKind, B, phi, y: int) -> np.ndarray:
    return loss_grad(kind, B, np.asarray(phi, dtype=float)[None, :], [y], weights=[1.0])


def erm_objective(dataset, model, kind: LossKind, reg: Regularizer | None = None) -> float:
    """Mean loss on ``dataset`` plus the regularizer."""
    reg = reg or Regularizer()
    Phi = model.featurize(dataset.features)
    return float(np.mean(losses(kind, model.weights, Phi, dataset.labels)) + reg.value(model.weights))
