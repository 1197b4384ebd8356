"""Fragility Index of an error sample under KL and 1-Wasserstein ambiguity.

Under KL the index is the root in ``r`` of
``E[exp(eps / r)] - exp(tau / r)``. Bracketing and bisection run on the
equivalent certainty-equivalent gap ``r * log E[exp(eps / r)] - tau``, which
has the same sign and never overflows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core.metrics import ErrorSample

INFINITY_CAP = 1e12


@dataclass(frozen=True)
class FiKlConfig:
    tolerance: float = 1e-8  # relative bracket width
    max_doublings: int = 60
    infinity_cap: float = INFINITY_CAP

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_doublings < 1:
            raise ValueError("max_doublings must be >= 1")


@dataclass(frozen=True)
class FiWConfig:
    upper_bound: float

    def __post_init__(self):
        if not math.isfinite(self.upper_bound):
            raise ValueError("upper bound must be finite")


@dataclass(frozen=True)
class FiResult:
    value: float
    metric: str
    tau: float
    iterations: int = 0
    residual: float = 0.0
    status: str = "root"  # root | prorobust | antifragile | no_bracket | closed_form

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)

    def to_dict(self, cap: float = INFINITY_CAP) -> dict:
        return {
            "metric": self.metric,
            "tau": self.tau,
            "value": self.value if self.finite else cap,
            "finite": self.finite,
            "iterations": self.iterations,
            "residual": self.residual,
        }


def _as_sample(sample, target=None) -> ErrorSample:
    if isinstance(sample, ErrorSample):
        return sample if target is None else sample.with_target(target)
    return ErrorSample(sample, 0.0 if target is None else target)


def g_kl(r: float, sample: ErrorSample) -> float:
    """``E[exp(eps / r)] - exp(tau / r)``, shifted by the largest exponent."""
    if not r > 0:
        raise ValueError("r must be positive")
    sample = _as_sample(sample)
    tau = sample.target
    shift = max(sample.max(), tau) / r
    d = math.exp(sample.log_mean_exp(1.0 / r) - shift) - math.exp(tau / r - shift)
    if d == 0.0:
        return 0.0
    mag = shift + math.log(abs(d))
    return math.copysign(math.exp(mag) if mag < 709.0 else math.inf, d)


def kl_gap(r: float, sample: ErrorSample) -> float:
    """``r log E[exp(eps / r)] - tau``: same sign as ``g_kl`` and nonincreasing in ``r``."""
    if not r > 0:
        raise ValueError("r must be positive")
    sample = _as_sample(sample)
    return r * sample.log_mean_exp(1.0 / r) - sample.target


def solve_fi_kl(sample: ErrorSample, cfg: FiKlConfig | None = None) -> FiResult:
    """Bracket and bisect on the sample normalized to ``tau = 0`` and ``max = 1``.

    The index is positively homogeneous, so the root of the normalized problem
    times the scale is the root of the original one; normalizing keeps the gap
    well above rounding noise when errors are tiny or huge.
    """
    cfg = cfg or FiKlConfig()
    sample = _as_sample(sample)
    tau = sample.target
    z = sample.shifted(tau)
    scale = z.max()
    if scale <= 0:
        return FiResult(0.0, "kl", tau, status="prorobust")
    if z.mean() >= 0:
        # Jensen: the gap stays positive for every finite r
        return FiResult(math.inf, "kl", tau, status="antifragile")
    inv = 1.0 / scale
    if math.isfinite(inv) and abs(z.min()) * inv < 1e250:
        z = z.scaled(inv)
    else:
        # extreme dynamic range: terms this far below zero vanish under exp anyway
        with np.errstate(over="ignore"):
            z = ErrorSample(np.maximum(z.values / scale, -1e250), 0.0, z.kind)

    it = 0
    lo = hi = 1.0
    if kl_gap(1.0, z) > 0:
        while kl_gap(hi, z) > 0:
            it += 1
            if it > cfg.max_doublings:
                return FiResult(math.inf, "kl", tau, it, status="no_bracket")
            lo, hi = hi, 2.0 * hi
    else:
        while kl_gap(lo, z) <= 0:
            it += 1
            if it > cfg.max_doublings:
                r = lo * scale
                return FiResult(r, "kl", tau, it, g_kl(r, sample), status="no_bracket")
            lo, hi = lo / 2.0, lo
    # invariant: gap(lo) > 0 >= gap(hi)
    while hi - lo > cfg.tolerance * hi:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        it += 1
        if kl_gap(mid, z) > 0:
            lo = mid
        else:
            hi = mid
    # hi is feasible, so bounds derived from the returned value hold exactly
    r = hi * scale
    if r > cfg.infinity_cap:
        return FiResult(math.inf, "kl", tau, it, status="no_bracket")
    with np.errstate(invalid="ignore", over="ignore"):  # 1 / r can overflow for subnormal roots
        residual = g_kl(r, sample)
    return FiResult(r, "kl", tau, it, residual)


def fi_kl(sample, cfg: FiKlConfig | None = None) -> float:
    """KL Fragility Index: 0 when every error is at most ``tau``, inf when the mean is not below it."""
    return solve_fi_kl(_as_sample(sample), cfg).value


def solve_fi_w(sample, cfg: FiWConfig) -> FiResult:
    sample = _as_sample(sample)
    ub, tau = float(cfg.upper_bound), sample.target
    if ub < sample.max():
        raise ValueError(f"upper bound {ub} is below the largest error {sample.max()}")
    mean = sample.mean()
    if ub <= tau:
        value = 0.0
    elif mean <= tau:
        value = (ub - tau) / (ub - mean)
    else:
        value = math.inf
    return FiResult(value, "wasserstein", tau, status="closed_form")


def fi_w(sample, cfg: FiWConfig | float) -> float:
    """1-Wasserstein Fragility Index on errors bounded above by ``cfg.upper_bound``."""
    if not isinstance(cfg, FiWConfig):
        cfg = FiWConfig(float(cfg))
    return solve_fi_w(sample, cfg).value


def fi_multiclass(per_class: Sequence, cfg=None) -> float:
    """Mean of per-class indices (one-vs-rest); inf if any class is inf."""
    per_class = list(per_class)
    if not per_class:
        raise ValueError("need at least one per-class sample")
    if isinstance(cfg, (FiWConfig, float, int)) and not isinstance(cfg, bool):
        vals = [fi_w(s, cfg) for s in per_class]
    else:
        vals = [fi_kl(s, cfg) for s in per_class]
    if any(math.isinf(v) for v in vals):
        return math.inf
    return float(np.mean(vals))


def tail_bound(fi: float, tau: float, theta):
    """Upper bound ``exp(-(theta - tau) / fi)`` on ``P(eps >= theta)``."""
    theta = np.asarray(theta, dtype=float)
    if math.isinf(fi):
        out = np.ones_like(theta)
    elif fi <= 0:
        out = np.where(theta > tau, 0.0, 1.0)
    else:
        out = np.exp(-np.maximum(theta - tau, 0.0) / fi)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def var_bound(fi: float, tau: float, alpha: float) -> float:
    """Bound on the upper ``alpha``-quantile of the errors: ``tau - fi * ln(alpha)``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if math.isinf(fi):
        return math.inf
    return float(tau - fi * math.log(alpha))


def fi_loss_based(losses, tau: float | None = None, cfg: FiKlConfig | None = None) -> float:
    """KL index of per-sample loss values; the target defaults to 1 for raw arrays."""
    if isinstance(losses, ErrorSample):
        sample = losses if tau is None else losses.with_target(tau)
    else:
        sample = ErrorSample(losses, 1.0 if tau is None else tau, kind="loss")
    return fi_kl(sample, cfg)


def empirical_var(sample: ErrorSample, alpha: float) -> float:
    """Smallest ``v`` with ``P(eps > v) <= alpha`` (upper quantile)."""
    v = np.sort(sample.values)
    n = v.size
    # the j-th order statistic (0-based) works once at most alpha*n points exceed it
    j = n - 1 - int(math.floor(alpha * n + 1e-12))
    return float(v[max(j, 0)])
