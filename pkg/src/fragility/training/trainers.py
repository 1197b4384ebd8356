"""ERM baseline and fragility-minimizing trainers."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..core.data import Dataset, FeatureMap, ScoreModel, max_pairwise_dual_norm
from ..core.losses import LossKind, LossName, Regularizer, loss_grad, losses
from ..core.norms import NormKind, norm as vnorm
from .bisect import bisect_fragility
from .inner import InnerProblem, InnerSolution, kl_aggregate
from .spec import Ambiguity, SolverParams, TrainResult, TrainSpec


@dataclass
class ErmResult:
    model: ScoreModel
    objective: float
    converged: bool
    iterations: int
    method: str
    history: list[float] = field(default_factory=list)

    @property
    def weights(self) -> np.ndarray:
        return self.model.weights


def _design(dataset: Dataset, fmap: FeatureMap):
    return fmap(dataset.features), dataset.labels, dataset.class_count


def _erm_fun(loss, reg, Phi, y):
    def f(B):
        return float(np.mean(losses(loss, B, Phi, y))) + reg.value(B)

    def g(B):
        return loss_grad(loss, B, Phi, y) + reg.gradient(B)

    return f, g


def _gradient_descent(f, g, B0, tol: float, max_iter: int):
    """Gradient descent with Barzilai-Borwein trial steps and Armijo backtracking.

    Every accepted step decreases ``f``.
    """
    B = np.array(B0, dtype=float)
    fB, gB = f(B), g(B)
    hist = [fB]
    step = 1.0
    B_prev = g_prev = None
    it = 0
    for it in range(1, max_iter + 1):
        gn2 = float(np.sum(gB * gB))
        if math.sqrt(gn2) <= tol:
            return B, fB, True, it - 1, hist
        if B_prev is not None:
            s, r = B - B_prev, gB - g_prev
            sr = float(np.sum(s * r))
            if sr > 0:
                step = float(np.sum(s * s)) / sr
        t = step
        while True:
            Bn = B - t * gB
            fn = f(Bn)
            if fn <= fB - 1e-4 * t * gn2:
                break
            t *= 0.5
            if t < 1e-20:
                return B, fB, False, it, hist
        B_prev, g_prev = B, gB
        B, fB = Bn, fn
        gB = g(B)
        hist.append(fB)
    return B, fB, math.sqrt(float(np.sum(gB * gB))) <= tol, it, hist


def train_erm(dataset: Dataset, loss: LossKind, reg: Regularizer | None = None,
              solver: SolverParams | None = None, feature_map: FeatureMap | None = None,
              norm: NormKind = NormKind.TWO) -> ErmResult:
    """Minimize mean loss plus regularizer from zero weights.

    Smooth objectives use gradient descent with backtracking; hinge-type
    losses with a kink (or an L1 penalty) go through the epigraph solver.
    """
    reg = reg or Regularizer()
    solver = solver or SolverParams()
    fmap = feature_map or FeatureMap()
    Phi, y, C = _design(dataset, fmap)
    B0 = np.zeros((Phi.shape[1], C))
    smooth = (loss.name is LossName.CROSS_ENTROPY
              or (loss.is_smooth and C == 2)) and reg.kind != "l1"
    f, g = _erm_fun(loss, reg, Phi, y)
    if smooth:
        B, fB, ok, it, hist = _gradient_descent(f, g, B0, solver.inner_tol, solver.max_inner_iter)
        method = "gradient_descent"
    else:
        prob = InnerProblem(Phi, y, C, loss, reg, norm, mode="erm",
                            max_iter=min(solver.max_inner_iter, 2000))
        sol = prob.solve(0.0)
        B, fB, ok, it = sol.weights, f(sol.weights), sol.success, sol.iterations
        hist = [f(B0), fB]
        method = "slsqp_epigraph"
    if not ok:
        warnings.warn(f"ERM did not reach tolerance after {it} iterations", RuntimeWarning)
    return ErmResult(ScoreModel(B, fmap, norm), float(fB), bool(ok), int(it), method, hist)


def set_target(dataset: Dataset | None, spec: TrainSpec, erm_value: float | None = None) -> float:
    """Absolute target, or ``target_ratio`` times the ERM objective."""
    if spec.target is not None:
        return float(spec.target)
    lam = spec.target_ratio
    if lam <= 1:
        warnings.warn(f"target ratio {lam} <= 1: the target may be unattainable", UserWarning)
    if erm_value is None:
        if dataset is None:
            raise ValueError("need a dataset or an ERM objective value")
        erm_value = train_erm(dataset, spec.loss, spec.reg, spec.solver, spec.feature_map,
                              spec.norm).objective
    return float(lam * erm_value)


def kl_constraint_value(dataset: Dataset, B, k: float, loss: LossKind,
                        reg: Regularizer | None, tau: float,
                        feature_map: FeatureMap | None = None) -> float:
    """``k log mean exp(loss_n / k) + R(B) - tau``."""
    if not k > 0:
        raise ValueError("k must be positive")
    reg = reg or Regularizer()
    Phi = (feature_map or FeatureMap())(dataset.features)
    ell = losses(loss, B, Phi, dataset.labels)
    return kl_aggregate(ell, k) + reg.value(B) - tau


def default_gamma(Phi, norm: NormKind, loss: LossKind, lipschitz=None) -> float:
    phimax = float(np.max(vnorm(Phi, norm, axis=1)))
    if lipschitz is not None:
        return 1.05 * lipschitz[1] / lipschitz[0] * phimax
    return (2.1 if loss.is_hinge_type else 1.05) * phimax


def exactness_threshold(Phi, norm: NormKind, loss: LossKind, lipschitz=None) -> float:
    phimax = float(np.max(vnorm(Phi, norm, axis=1)))
    if lipschitz is not None:
        return lipschitz[1] / lipschitz[0] * phimax
    return (2.0 if loss.is_hinge_type else 1.0) * phimax


def _run(dataset: Dataset, spec: TrainSpec, mode: str, *, tau: float | None = None,
         erm: ErmResult | None = None, radius: float | None = None) -> TrainResult:
    Phi, y, C = _design(dataset, spec.feature_map)
    if tau is None:
        tau = set_target(dataset, spec, None if erm is None else erm.objective)
    gamma = None
    approx = False
    if mode in ("wass", "lip"):
        lip = spec.lipschitz if mode == "lip" else None
        gamma = spec.gamma if spec.gamma is not None else default_gamma(Phi, spec.norm, spec.loss, lip)
        approx = gamma < exactness_threshold(Phi, spec.norm, spec.loss, lip)
    prob = InnerProblem(Phi, y, C, spec.loss, spec.reg, spec.norm, mode, tau=tau, gamma=gamma,
                        radius=radius, lipschitz=spec.lipschitz if mode == "lip" else None,
                        lambda_max=spec.solver.lambda_max,
                        max_iter=min(spec.solver.max_inner_iter, 2000))

    def solve(k: float, warm: InnerSolution | None) -> InnerSolution:
        if warm is None:
            return prob.solve(k)
        return prob.solve(k, warm.weights, warm.lam)

    out = bisect_fragility(solve, spec.solver)
    sol = out.solution
    diag = out.diagnostics()
    diag.update({
        "mode": mode,
        "gamma": gamma,
        "max_pairwise_dual_gap": max_pairwise_dual_norm(sol.weights, spec.norm),
        "frobenius_norm": float(np.linalg.norm(sol.weights)),
        "regularizer": spec.reg.value(sol.weights),
    })
    return TrainResult(k_star=float(out.k), weights=np.array(sol.weights), tau=float(tau),
                       feasibility_slack=float(sol.value), active=out.active, spec=spec,
                       lam=float(sol.lam), approximation_regime=bool(approx), diagnostics=diag)


def train_kl(dataset: Dataset, spec: TrainSpec, *, tau: float | None = None,
             erm: ErmResult | None = None) -> TrainResult:
    """Smallest ``k`` with ``min_B k log mean exp(loss / k) + R(B) <= tau``."""
    return _run(dataset, spec, "kl", tau=tau, erm=erm)


def train_wass_ce(dataset: Dataset, spec: TrainSpec, *, tau: float | None = None,
                  erm: ErmResult | None = None) -> TrainResult:
    """Cross-entropy under 1-Wasserstein ambiguity; pairwise gaps bounded by ``k``."""
    if spec.loss.name is not LossName.CROSS_ENTROPY:
        raise ValueError("train_wass_ce needs the cross-entropy loss")
    return _run(dataset, spec, "wass", tau=tau, erm=erm)


def train_wass_hinge(dataset: Dataset, spec: TrainSpec, *, tau: float | None = None,
                     erm: ErmResult | None = None) -> TrainResult:
    """Hinge-type losses under 1-Wasserstein ambiguity; pairwise gaps bounded by ``k / theta``."""
    if not spec.loss.is_hinge_type:
        raise ValueError("train_wass_hinge needs a hinge-type loss")
    return _run(dataset, spec, "wass", tau=tau, erm=erm)


def train_wass_lipschitz(dataset: Dataset, spec: TrainSpec, *, tau: float | None = None,
                         erm: ErmResult | None = None) -> TrainResult:
    """Any convex Lipschitz loss with ``||B||_F <= k / omega1``."""
    if spec.lipschitz is None:
        raise ValueError("the Lipschitz path needs (omega1, omega2)")
    return _run(dataset, spec, "lip", tau=tau, erm=erm)


def train_fi_dro(dataset: Dataset, spec: TrainSpec, *, tau: float | None = None,
                 erm: ErmResult | None = None) -> TrainResult:
    """Fragility restricted to a Wasserstein ball of radius ``spec.radius``.

    A multiplier ``lam`` in ``[0, lambda_max]`` is optimized jointly with the
    weights at each ``k``.
    """
    return _run(dataset, spec, "wass", tau=tau, erm=erm, radius=float(spec.radius))


def train_wasserstein(dataset: Dataset, spec: TrainSpec, **kw) -> TrainResult:
    if spec.lipschitz is not None:
        return train_wass_lipschitz(dataset, spec, **kw)
    if spec.loss.name is LossName.CROSS_ENTROPY:
        return train_wass_ce(dataset, spec, **kw)
    return train_wass_hinge(dataset, spec, **kw)


def train(dataset: Dataset, spec: TrainSpec, **kw) -> TrainResult:
    """Dispatch on ``spec.ambiguity``."""
    if spec.ambiguity is Ambiguity.KL:
        return train_kl(dataset, spec, **kw)
    if spec.ambiguity is Ambiguity.WASSERSTEIN:
        return train_wasserstein(dataset, spec, **kw)
    if spec.ambiguity is Ambiguity.WASSERSTEIN_DRO:
        return train_fi_dro(dataset, spec, **kw)
    raise ValueError("use train_erm for the ERM baseline")
