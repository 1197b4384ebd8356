"""One-hidden-layer ReLU network with hand-written backpropagation.

The last layer ``B`` can carry a fragility-inducing penalty

    (1 / lambda0) * (k + alpha / 2 * sum_{i<j} (||beta_i - beta_j||_* - k)_+ ^ 2)

with ``k >= 0`` trained alongside the weights.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp, softmax

from .core.data import Dataset
from .core.metrics import auc, one_vs_rest_errors
from .core.norms import NormKind, dual_norm, dual_norm_subgradient
from .fi import fi_multiclass


@dataclass
class MlpModel:
    W1: np.ndarray  # (D, H)
    b1: np.ndarray  # (H,)
    B: np.ndarray   # (H, C)
    b2: np.ndarray  # (C,)
    k: float = 0.0

    @classmethod
    def init(cls, input_dim: int, hidden: int, classes: int, rng: np.random.Generator) -> "MlpModel":
        W1 = rng.normal(0.0, math.sqrt(2.0 / input_dim), (input_dim, hidden))
        B = rng.normal(0.0, math.sqrt(1.0 / hidden), (hidden, classes))
        return cls(W1, np.zeros(hidden), B, np.zeros(classes), 0.0)

    @property
    def shapes(self) -> dict:
        return {"W1": list(self.W1.shape), "b1": list(self.b1.shape),
                "B": list(self.B.shape), "b2": list(self.b2.shape)}

    def features(self, X) -> np.ndarray:
        """Hidden representation: the network without its last layer."""
        return np.maximum(np.asarray(X, dtype=float) @ self.W1 + self.b1, 0.0)

    def logits(self, X) -> np.ndarray:
        return self.features(X) @ self.B + self.b2

    def proba(self, X) -> np.ndarray:
        return softmax(self.logits(X), axis=1)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.logits(X), axis=1)

    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "B": self.B, "b2": self.b2}

    def copy(self) -> "MlpModel":
        return MlpModel(self.W1.copy(), self.b1.copy(), self.B.copy(), self.b2.copy(), self.k)

    def to_dict(self) -> dict:
        out = {"shapes": self.shapes, "k": self.k}
        for name, p in self.params().items():
            out[name] = np.asarray(p).ravel().tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        sh = d["shapes"]
        arr = {n: np.asarray(d[n], dtype=float).reshape(sh[n]) for n in ("W1", "b1", "B", "b2")}
        return cls(k=float(d["k"]), **arr)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "MlpModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class NnTrainSpec:
    lambda0: float = 10.0  # math.inf switches the penalty off
    alpha: float = 10.0
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    weight_decay: float = 1e-4
    hidden: int = 32
    norm: NormKind = NormKind.TWO

    def __post_init__(self):
        if not self.lambda0 > 0 or self.alpha < 0:
            raise ValueError("need lambda0 > 0 and alpha >= 0")
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1 or self.hidden < 1:
            raise ValueError("learning rate, epochs, batch size and width must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be >= 0")
        object.__setattr__(self, "norm", NormKind.parse(self.norm))

    @property
    def regularized(self) -> bool:
        return math.isfinite(self.lambda0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["norm"] = self.norm.value
        d["lambda0"] = self.lambda0 if math.isfinite(self.lambda0) else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NnTrainSpec":
        d = dict(d)
        if d.get("lambda0", 10.0) is None:
            d["lambda0"] = math.inf
        return cls(**d)


def fi_regularizer(B, k: float, lambda0: float, alpha: float, norm: NormKind = NormKind.TWO):
    """Penalty value and its gradients with respect to ``B`` and ``k``.

    Returns ``(value, grad_B, grad_k)``. At a zero violation the zero branch of
    the hinge is taken.
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    B = np.asarray(B, dtype=float)
    inv = 0.0 if math.isinf(lambda0) else 1.0 / lambda0
    C = B.shape[1]
    gB = np.zeros_like(B)
    total_sq = 0.0
    total_v = 0.0
    for i, j in itertools.combinations(range(C), 2):
        d = B[:, i] - B[:, j]
        v = float(dual_norm(d, norm)) - k
        if v > 0:
            total_sq += v * v
            total_v += v
            s = dual_norm_subgradient(d, norm)
            gB[:, i] += alpha * v * s
            gB[:, j] -= alpha * v * s
    value = inv * (k + 0.5 * alpha * total_sq)
    return value, inv * gB, inv * (1.0 - alpha * total_v)


def _objective_and_grads(model: MlpModel, X, y, spec: NnTrainSpec):
    """Batch cross-entropy + weight decay + penalty, with gradients for every parameter."""
    n = X.shape[0]
    Z1 = X @ model.W1 + model.b1
    H = np.maximum(Z1, 0.0)
    S = H @ model.B + model.b2
    lse = logsumexp(S, axis=1)
    ce = float(np.mean(lse - S[np.arange(n), y]))
    wd = spec.weight_decay
    decay = 0.5 * wd * (float(np.sum(model.W1 ** 2)) + float(np.sum(model.B ** 2)))
    reg, gB_reg, gk = fi_regularizer(model.B, model.k, spec.lambda0, spec.alpha, spec.norm)

    dS = np.exp(S - lse[:, None])
    dS[np.arange(n), y] -= 1.0
    dS /= n
    gB = H.T @ dS + wd * model.B + gB_reg
    gb2 = dS.sum(axis=0)
    dH = dS @ model.B.T
    dZ1 = dH * (Z1 > 0)
    gW1 = X.T @ dZ1 + wd * model.W1
    gb1 = dZ1.sum(axis=0)
    grads = {"W1": gW1, "b1": gb1, "B": gB, "b2": gb2, "k": gk}
    return ce + decay + reg, ce, grads


def evaluate_nn(model: MlpModel, dataset: Dataset) -> dict:
    P = model.proba(dataset.features)
    y = dataset.labels
    ce = float(np.mean(-np.log(np.maximum(P[np.arange(y.size), y], 1e-300))))
    acc = float(np.mean(np.argmax(P, axis=1) == y))
    C = P.shape[1]
    if C == 2:
        a = auc(P[y == 1, 1], P[y == 0, 1])
    else:
        a = float(np.mean([auc(P[y == j, j], P[y != j, j]) for j in range(C)
                           if 0 < np.sum(y == j) < y.size]))
    samples = one_vs_rest_errors(P, y)
    if C == 2:
        samples = samples[1:]
    fi = fi_multiclass(samples) if samples else math.nan
    return {"loss": ce, "accuracy": acc, "auc": a, "fi": fi}


@dataclass
class NnHistory:
    epochs: list[dict] = field(default_factory=list)
    k: list[float] = field(default_factory=list)


def train_nn_fi(dataset: Dataset, spec: NnTrainSpec, validation: Dataset | None = None,
                record_metrics: bool = True) -> tuple[MlpModel, NnHistory]:
    """Minibatch SGD; every random draw comes from a generator seeded by ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    X, y = dataset.features, dataset.labels
    model = MlpModel.init(X.shape[1], spec.hidden, dataset.class_count, rng)
    gaps = [float(dual_norm(model.B[:, i] - model.B[:, j], spec.norm))
            for i, j in itertools.combinations(range(dataset.class_count), 2)]
    model.k = float(np.mean(gaps)) if gaps else 0.0
    hist = NnHistory()
    lr = spec.learning_rate
    n = X.shape[0]
    for epoch in range(spec.epochs):
        order = rng.permutation(n)
        for start in range(0, n, spec.batch_size):
            idx = order[start:start + spec.batch_size]
            total, _, g = _objective_and_grads(model, X[idx], y[idx], spec)
            if not math.isfinite(total):
                raise FloatingPointError(f"objective diverged at epoch {epoch}, batch {start // spec.batch_size}")
            model.W1 -= lr * g["W1"]
            model.b1 -= lr * g["b1"]
            model.B -= lr * g["B"]
            model.b2 -= lr * g["b2"]
            model.k = max(0.0, model.k - lr * g["k"])
        hist.k.append(model.k)
        if record_metrics:
            row = {"epoch": epoch + 1, "k": model.k}
            row.update({f"train_{m}": v for m, v in evaluate_nn(model, dataset).items()})
            if validation is not None:
                row.update({f"val_{m}": v for m, v in evaluate_nn(model, validation).items()})
            hist.epochs.append(row)
    return model, hist


def grad_check(model: MlpModel, X, y, spec: NnTrainSpec, n_coords: int = 20, step: float = 1e-5,
               seed: int = 0, floor: float = 1e-4) -> float:
    """Largest ``|analytic - numeric| / max(|analytic|, |numeric|, floor)`` over sampled coordinates.

    Central differences on the full objective, including ``k``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    _, _, g = _objective_and_grads(model, X, y, spec)
    worst = 0.0
    for name in ("W1", "b1", "B", "b2", "k"):
        if name == "k":
            coords = [None]
        else:
            p = getattr(model, name)
            flat = rng.choice(p.size, size=min(n_coords, p.size), replace=False)
            coords = [np.unravel_index(int(c), p.shape) for c in flat]
        for c in coords:
            m_plus, m_minus = model.copy(), model.copy()
            if name == "k":
                m_plus.k += step
                m_minus.k = m_minus.k - step
                analytic = g["k"]
            else:
                getattr(m_plus, name)[c] += step
                getattr(m_minus, name)[c] -= step
                analytic = g[name][c]
            if name == "k" and m_minus.k < 0:
                continue
            fp = _objective_and_grads(m_plus, X, y, spec)[0]
            fm = _objective_and_grads(m_minus, X, y, spec)[0]
            numeric = (fp - fm) / (2 * step)
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
            worst = max(worst, err)
    return float(worst)
