"""Training configuration and result records with JSON round-trips."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..core.data import FeatureMap, ScoreModel
from ..core.losses import LossKind, LossName, Regularizer
from ..core.norms import NormKind


class Ambiguity(str, enum.Enum):
    KL = "kl"
    WASSERSTEIN = "wasserstein"
    WASSERSTEIN_DRO = "wasserstein_dro"
    ERM = "erm"

    @classmethod
    def parse(cls, v) -> "Ambiguity":
        if isinstance(v, cls):
            return v
        v = str(v).lower()
        return cls({"w": "wasserstein", "wasserstein1": "wasserstein", "dro": "wasserstein_dro"}.get(v, v))


class TargetTooTight(RuntimeError):
    """The target cannot be met for any finite fragility."""


@dataclass(frozen=True)
class SolverParams:
    outer_tol: float = 1e-5
    inner_tol: float = 1e-6
    max_inner_iter: int = 5000
    max_doublings: int = 30
    lambda_max: float = 1e4

    def __post_init__(self):
        for name in ("outer_tol", "inner_tol", "max_inner_iter", "max_doublings", "lambda_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return {"outer_tol": self.outer_tol, "inner_tol": self.inner_tol,
                "max_inner_iter": self.max_inner_iter, "max_doublings": self.max_doublings,
                "lambda_max": self.lambda_max}

    @classmethod
    def from_dict(cls, d: dict | None) -> "SolverParams":
        d = dict(d or {})
        unknown = set(d) - set(cls().to_dict())
        if unknown:
            raise ValueError(f"unknown solver fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class TrainSpec:
    """What to train: loss, ambiguity, target and transport-cost settings.

    Exactly one of ``target`` (absolute) and ``target_ratio`` applies; the
    ratio is multiplied by the regularized ERM objective.
    """

    loss: LossKind = field(default_factory=LossKind)
    ambiguity: Ambiguity = Ambiguity.KL
    target: float | None = None
    target_ratio: float | None = 1.1
    gamma: float | None = None
    norm: NormKind = NormKind.TWO
    reg: Regularizer = field(default_factory=Regularizer)
    solver: SolverParams = field(default_factory=SolverParams)
    radius: float = 0.0
    lipschitz: tuple[float, float] | None = None
    feature_map: FeatureMap = field(default_factory=FeatureMap)

    def __post_init__(self):
        object.__setattr__(self, "ambiguity", Ambiguity.parse(self.ambiguity))
        object.__setattr__(self, "norm", NormKind.parse(self.norm))
        if isinstance(self.loss, (str, dict)):
            object.__setattr__(self, "loss", LossKind.from_dict(self.loss))
        if self.target is None and self.target_ratio is None and self.ambiguity is not Ambiguity.ERM:
            raise ValueError("either target or target_ratio is required")
        if self.target is not None:
            object.__setattr__(self, "target_ratio", None)
        if self.gamma is not None and self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.radius < 0:
            raise ValueError("radius must be >= 0")
        if self.lipschitz is not None:
            w1, w2 = (float(v) for v in self.lipschitz)
            if not (w1 > 0 and w2 >= 0):
                raise ValueError("Lipschitz constants need omega1 > 0 and omega2 >= 0")
            object.__setattr__(self, "lipschitz", (w1, w2))

    def with_(self, **kw) -> "TrainSpec":
        if "target" in kw and kw["target"] is not None:
            kw.setdefault("target_ratio", None)
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "loss": self.loss.to_dict(),
            "ambiguity": self.ambiguity.value,
            "target": self.target,
            "target_ratio": self.target_ratio,
            "gamma": self.gamma,
            "norm": self.norm.value,
            "reg": self.reg.to_dict(),
            "solver": self.solver.to_dict(),
            "radius": self.radius,
            "lipschitz": list(self.lipschitz) if self.lipschitz else None,
            "feature_map": self.feature_map.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainSpec":
        known = set(cls().to_dict())
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train-spec fields: {sorted(unknown)}")
        target = d.get("target")
        ratio = d.get("target_ratio", None if target is not None else 1.1)
        lip = d.get("lipschitz")
        return cls(
            loss=LossKind.from_dict(d.get("loss", "hinge")),
            ambiguity=d.get("ambiguity", "kl"),
            target=None if target is None else float(target),
            target_ratio=None if ratio is None else float(ratio),
            gamma=None if d.get("gamma") is None else float(d["gamma"]),
            norm=d.get("norm", "two"),
            reg=Regularizer.from_dict(d.get("reg")),
            solver=SolverParams.from_dict(d.get("solver")),
            radius=float(d.get("radius", 0.0)),
            lipschitz=tuple(lip) if lip else None,
            feature_map=FeatureMap.from_dict(d.get("feature_map")),
        )


@dataclass
class TrainResult:
    k_star: float
    weights: np.ndarray
    feasibility_slack: float
    active: bool
    tau: float
    spec: TrainSpec
    lam: float = 0.0
    approximation_regime: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def model(self) -> ScoreModel:
        return ScoreModel(self.weights, self.spec.feature_map, self.spec.norm)

    def to_dict(self) -> dict:
        W = np.asarray(self.weights, dtype=float)
        return {
            "k_star": self.k_star,
            "weights": {"shape": list(W.shape), "data": W.ravel().tolist()},
            "feasibility_slack": self.feasibility_slack,
            "active": self.active,
            "tau": self.tau,
            "lam": self.lam,
            "approximation_regime": self.approximation_regime,
            "spec": self.spec.to_dict(),
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainResult":
        w = d["weights"]
        W = np.asarray(w["data"], dtype=float).reshape(w["shape"])
        return cls(
            k_star=float(d["k_star"]), weights=W,
            feasibility_slack=float(d["feasibility_slack"]), active=bool(d["active"]),
            tau=float(d["tau"]), spec=TrainSpec.from_dict(d["spec"]),
            lam=float(d.get("lam", 0.0)),
            approximation_regime=bool(d.get("approximation_regime", False)),
            diagnostics=dict(d.get("diagnostics", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "TrainResult":
        return cls.from_dict(json.loads(Path(path).read_text()))


def dumps(obj) -> str:
    """JSON with round-trip-exact floats (Python's repr is shortest-exact)."""
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=False, default=_default) + "\n"


def _default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, enum.Enum):
        return o.value
    raise TypeError(f"cannot serialize {type(o).__name__}")


def is_hinge_type(loss: LossKind) -> bool:
    return loss.name is not LossName.CROSS_ENTROPY
