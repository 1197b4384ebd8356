"""Post-training audits: label-flip bounds, reweighting checks, tail certificates."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog, minimize_scalar

from ..core.data import Dataset
from ..core.losses import LossName, Regularizer, losses
from ..core.metrics import ErrorSample, ranking_errors
from ..core.norms import norm as vnorm
from ..fi import fi_kl, tail_bound
from .inner import InnerProblem
from .spec import Ambiguity, TrainResult, TrainSpec


def _phi(result: TrainResult, dataset: Dataset) -> np.ndarray:
    return result.spec.feature_map(dataset.features)


def flip_attack_bound(result: TrainResult, p: float, dataset: Dataset) -> float:
    """``p * max_n ||phi_n|| * k*`` for a cross-entropy Wasserstein result."""
    if result.spec.loss.name is not LossName.CROSS_ENTROPY:
        raise ValueError("the flip bound applies to cross-entropy results")
    if not 0 <= p <= 1:
        raise ValueError("flip rate must lie in [0, 1]")
    phibar = float(np.max(vnorm(_phi(result, dataset), result.spec.norm, axis=1)))
    return float(p * phibar * result.k_star)


def worst_flip_increase(result: TrainResult, dataset: Dataset, max_flips: int = 1,
                        enumeration_limit: int = 2_000_000) -> float:
    """Largest ``L(B*; y_hat) - L(B*; y)`` over relabelings ``y_hat`` differing in at most ``max_flips`` places.

    ``y`` are the labels the model was trained on. Every candidate relabeling is
    enumerated explicitly.
    """
    Phi = _phi(result, dataset)
    B = result.weights
    y = dataset.labels
    N, C = Phi.shape[0], dataset.class_count
    loss = result.spec.loss
    base = losses(loss, B, Phi, y)
    # per-sample loss under each candidate label
    table = np.stack([losses(loss, B, Phi, np.full(N, c)) for c in range(C)], axis=1)
    n_cand = sum(math.comb(N, m) * (C - 1) ** m for m in range(max_flips + 1))
    if n_cand > enumeration_limit:
        raise ValueError(f"{n_cand} relabelings exceed the enumeration limit")
    best = 0.0
    for m in range(1, max_flips + 1):
        for idx in itertools.combinations(range(N), m):
            choices = [[c for c in range(C) if c != y[n]] for n in idx]
            for labs in itertools.product(*choices):
                inc = sum(table[n, c] - base[n] for n, c in zip(idx, labs)) / N
                best = max(best, inc)
    return float(best)


@dataclass(frozen=True)
class AuditReport:
    slack: float
    expected_loss: float
    divergence: float
    ok: bool


def kl_divergence(q, p=None) -> float:
    q = np.asarray(q, dtype=float)
    p = np.full(q.size, 1.0 / q.size) if p is None else np.asarray(p, dtype=float)
    m = q > 0
    return float(np.sum(q[m] * np.log(q[m] / p[m])))


def wasserstein_to_empirical(q, Phi, y, gamma: float, norm) -> float:
    """Optimal transport cost from ``q`` to the uniform weights on the same points.

    Cost is ``||phi_i - phi_j|| + gamma * [y_i != y_j]``.
    """
    q = np.asarray(q, dtype=float)
    N = q.size
    cost = vnorm(Phi[:, None, :] - Phi[None, :, :], norm, axis=2) + gamma * (y[:, None] != y[None, :])
    A_eq = np.zeros((2 * N, N * N))
    for i in range(N):
        A_eq[i, i * N:(i + 1) * N] = 1.0
        A_eq[N + i, i::N] = 1.0
    b_eq = np.concatenate([q, np.full(N, 1.0 / N)])
    res = linprog(cost.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def audit_rs_constraint(result: TrainResult, dataset: Dataset, reweighting,
                        distance: str = "kl", tol: float | None = None) -> AuditReport:
    """``E_Q[loss] + R - tau - k* D(Q, P_hat)`` for a reweighting ``Q`` of the training points."""
    q = np.asarray(reweighting, dtype=float)
    if q.shape != (dataset.n_samples,) or np.any(q < 0):
        raise ValueError("reweighting must be a nonnegative vector over the samples")
    if abs(q.sum() - 1.0) > 1e-9:
        raise ValueError("reweighting must sum to 1")
    Phi = _phi(result, dataset)
    ell = losses(result.spec.loss, result.weights, Phi, dataset.labels)
    R = result.spec.reg.value(result.weights)
    if distance == "kl":
        D = kl_divergence(q)
    elif distance in ("wasserstein", "w"):
        gamma = result.diagnostics.get("gamma")
        if gamma is None:
            raise ValueError("result carries no transport cost gamma")
        D = wasserstein_to_empirical(q, Phi, dataset.labels, gamma, result.spec.norm)
    else:
        raise ValueError(f"unknown distance {distance!r}")
    el = float(q @ ell)
    slack = el + R - result.tau - result.k_star * D
    tol = result.spec.solver.outer_tol if tol is None else tol
    return AuditReport(float(slack), el, float(D), bool(slack <= tol))


@dataclass(frozen=True)
class TailCertificate:
    a: float
    scale: float  # a * k*
    shift: float  # tau - R(B*)
    n_pos: int
    n_neg: int

    def bound(self, theta):
        return tail_bound(self.scale, self.shift, theta)

    @property
    def fi_bound(self) -> float:
        return self.scale


def binary_ranking_errors(result: TrainResult, dataset: Dataset, target: float = 0.0) -> ErrorSample:
    """Ranking errors of ``(beta_1 - beta_0)^T phi``; label 1 is the positive class."""
    if dataset.class_count != 2:
        raise ValueError("binary data required")
    Phi = _phi(result, dataset)
    h = Phi @ (result.weights[:, 1] - result.weights[:, 0])
    lab = dataset.labels
    return ranking_errors(h[lab == 1], h[lab == 0], target)


def kl_tail_certificate(result: TrainResult, dataset: Dataset) -> TailCertificate:
    """Tail bound on the training ranking errors implied by a KL-trained binary model."""
    if dataset.class_count != 2:
        raise ValueError("the tail certificate needs binary data")
    if result.spec.ambiguity is not Ambiguity.KL:
        raise ValueError("the tail certificate needs a KL-trained result")
    counts = dataset.class_counts()
    n_pos, n_neg = int(counts[1]), int(counts[0])
    N = n_pos + n_neg
    denom = math.log(n_pos) + math.log(n_neg) if n_pos and n_neg else 0.0
    if denom <= 0:
        raise ValueError("each class needs at least one sample and N+ * N- > 1")
    a = max(1.0, math.log(N) / denom)
    shift = result.tau - result.spec.reg.value(result.weights)
    return TailCertificate(a, a * result.k_star, shift, n_pos, n_neg)


def check_tail_certificate(result: TrainResult, dataset: Dataset) -> dict:
    """Evaluate the certificate at every training ranking error above the shift."""
    cert = kl_tail_certificate(result, dataset)
    eps = binary_ranking_errors(result, dataset, cert.shift)
    thetas = np.unique(eps.values)
    thetas = thetas[thetas >= cert.shift]
    emp = eps.tail_fraction(thetas) if thetas.size else np.zeros(0)
    bnd = cert.bound(thetas) if thetas.size else np.zeros(0)
    fi = fi_kl(eps)
    return {
        "a": cert.a, "scale": cert.scale, "shift": cert.shift,
        "fi": fi, "fi_ok": bool(fi <= cert.scale * (1 + 1e-9) + 1e-12),
        "max_excess": float(np.max(emp - bnd)) if thetas.size else -math.inf,
        "ok": bool(np.all(emp <= np.asarray(bnd) + 1e-12)),
    }


def kl_lower_bound(dataset: Dataset, spec: TrainSpec, tau: float, eps2: float) -> tuple[float, float]:
    """Certificate ``(eps1, eps1 / eps2)`` for the fragility lower bound.

    ``eps1 = min_B sup_{KL(P, P_hat) <= eps2} E_P[loss] - tau``, using the dual
    ``min_{eta > 0} eta * eps2 + eta * log mean exp(loss / eta)``.
    """
    if not eps2 > 0:
        raise ValueError("eps2 must be positive")
    Phi = spec.feature_map(dataset.features)
    prob = InnerProblem(Phi, dataset.labels, dataset.class_count, spec.loss, Regularizer(),
                        spec.norm, "kl", tau=0.0)
    warm = {}

    def dual(log_eta):
        eta = math.exp(log_eta)
        sol = prob.solve(eta, warm.get("B"))
        warm["B"] = sol.weights
        return eta * eps2 + sol.value

    res = minimize_scalar(dual, bounds=(math.log(1e-4), math.log(1e4)), method="bounded",
                          options={"xatol": 1e-6})
    eps1 = float(res.fun) - tau
    return eps1, eps1 / eps2
