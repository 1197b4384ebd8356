"""Synthetic benchmarks, cross-validation and CSV ingestion."""

from __future__ import annotations

import csv
import io
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.model_selection import StratifiedKFold

from .core.data import Dataset, FeatureMap, ScoreModel
from .core.losses import LossKind, Regularizer, losses
from .core.metrics import auc, class_scores, one_vs_rest_errors
from .fi import fi_multiclass
from .training.spec import Ambiguity, TargetTooTight, TrainSpec, dumps
from .training.trainers import train, train_erm


# ---------------------------------------------------------------- data

@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian clusters on two informative dimensions plus optional noise dimensions.

    Binary means are ``(1, 1)`` and ``(-1, -1)``; four classes sit on the
    corners ``(+-1, +-1)``. ``samples_per_class`` sizes the training set.
    """

    samples_per_class: int = 25
    class_count: int = 2
    separation: float = 1.0
    cov_scale: float = 1.0
    noise_dims: int = 0
    p_flip: float = 0.0
    test_per_class: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.class_count not in (2, 4):
            raise ValueError("class_count must be 2 or 4")
        if self.samples_per_class < 1 or self.test_per_class < 1 or self.noise_dims < 0:
            raise ValueError("sample counts must be positive and noise_dims >= 0")
        if not 0 <= self.p_flip < 1:
            raise ValueError("p_flip must lie in [0, 1)")
        if not self.cov_scale > 0:
            raise ValueError("cov_scale must be positive")

    @property
    def means(self) -> np.ndarray:
        s = self.separation
        if self.class_count == 2:
            return np.array([[-s, -s], [s, s]])
        return np.array([[-s, -s], [s, -s], [-s, s], [s, s]])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        return cls(**d)


def _draw(rng: np.random.Generator, spec: SyntheticSpec, per_class: int):
    C = spec.class_count
    y = np.repeat(np.arange(C), per_class)
    X = spec.means[y] + math.sqrt(spec.cov_scale) * rng.standard_normal((y.size, 2))
    if spec.noise_dims:
        X = np.hstack([X, rng.standard_normal((y.size, spec.noise_dims))])
    return X, y


def flip_labels(labels, p: float, class_count: int, rng: np.random.Generator) -> np.ndarray:
    """Each label moves, with probability ``p``, to a uniformly drawn different class."""
    y = np.array(labels, copy=True)
    hit = rng.random(y.size) < p
    shift = rng.integers(1, class_count, size=y.size)
    y[hit] = (y[hit] + shift[hit]) % class_count
    return y


def gen_gaussian_clusters(spec: SyntheticSpec) -> tuple[Dataset, Dataset]:
    """Seeded train/test pair; label flips touch the training labels only."""
    s_train, s_test, s_flip = np.random.SeedSequence(spec.seed).spawn(3)
    Xtr, ytr = _draw(np.random.default_rng(s_train), spec, spec.samples_per_class)
    Xte, yte = _draw(np.random.default_rng(s_test), spec, spec.test_per_class)
    if spec.p_flip > 0:
        ytr = flip_labels(ytr, spec.p_flip, spec.class_count, np.random.default_rng(s_flip))
    return Dataset(Xtr, ytr, spec.class_count), Dataset(Xte, yte, spec.class_count)


def repetition_seed(master_seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([master_seed, rep]).generate_state(1)[0])


# ---------------------------------------------------------------- evaluation

def evaluate_scores(scores, labels, class_count: int) -> dict:
    """Accuracy, AUC and ranking-error FI (KL, target 0) of an ``(N, C)`` score matrix."""
    S = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    acc = float(np.mean(np.argmax(S, axis=1) == labels))
    H = class_scores(S)
    if class_count == 2:
        a = auc(H[labels == 1, 1], H[labels == 0, 1])
        fi = fi_multiclass(one_vs_rest_errors(H[:, [0, 1]], labels)[1:])
    else:
        per = [auc(H[labels == j, j], H[labels != j, j]) for j in range(class_count)
               if 0 < np.sum(labels == j) < labels.size]
        a = float(np.mean(per))
        fi = fi_multiclass(one_vs_rest_errors(H, labels))
    return {"accuracy": acc, "auc": a, "fi": fi}


def evaluate_model(model: ScoreModel, dataset: Dataset) -> dict:
    return evaluate_scores(model.scores(dataset.features), dataset.labels, dataset.class_count)


# ---------------------------------------------------------------- comparison harness

@dataclass(frozen=True)
class ModelSpec:
    name: str
    train: TrainSpec

    @property
    def is_erm(self) -> bool:
        return self.train.ambiguity is Ambiguity.ERM

    def to_dict(self) -> dict:
        return {"name": self.name, "train": self.train.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["name"], TrainSpec.from_dict(d["train"]))


def default_models(loss: str = "hinge", alpha: float = 0.01, reg: str = "l2",
                   target_ratio: float = 1.1, degree: int = 2) -> list[ModelSpec]:
    fmap = FeatureMap("polynomial", degree) if degree > 1 else FeatureMap()
    base = TrainSpec(loss=LossKind(loss), reg=Regularizer(reg, alpha), feature_map=fmap,
                     target_ratio=target_ratio)
    return [ModelSpec("erm", base.with_(ambiguity=Ambiguity.ERM)),
            ModelSpec("kl", base.with_(ambiguity=Ambiguity.KL)),
            ModelSpec("wasserstein", base.with_(ambiguity=Ambiguity.WASSERSTEIN))]


@dataclass(frozen=True)
class BenchSpec:
    """A grid of data settings, each run for every model over ``repetitions`` seeds."""

    data: SyntheticSpec = field(default_factory=SyntheticSpec)
    models: tuple[ModelSpec, ...] = field(default_factory=lambda: tuple(default_models()))
    settings: tuple[dict, ...] = ({},)
    repetitions: int = 100
    master_seed: int = 0
    cross_validate: bool = False
    cv_folds: int = 5

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("need at least one repetition")
        if not self.models:
            raise ValueError("need at least one model")
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            raise ValueError("model names must be unique")
        allowed = set(SyntheticSpec().to_dict()) - {"seed"}
        for s in self.settings:
            bad = set(s) - allowed
            if bad:
                raise ValueError(f"unknown setting keys {sorted(bad)}")

    def to_dict(self) -> dict:
        return {"data": self.data.to_dict(), "models": [m.to_dict() for m in self.models],
                "settings": [dict(s) for s in self.settings], "repetitions": self.repetitions,
                "master_seed": self.master_seed, "cross_validate": self.cross_validate,
                "cv_folds": self.cv_folds}

    @classmethod
    def from_dict(cls, d: dict) -> "BenchSpec":
        unknown = set(d) - set(cls().to_dict())
        if unknown:
            raise ValueError(f"unknown bench fields: {sorted(unknown)}")
        models = d.get("models")
        return cls(
            data=SyntheticSpec.from_dict(d.get("data", {})),
            models=tuple(ModelSpec.from_dict(m) for m in models) if models else tuple(default_models()),
            settings=tuple(dict(s) for s in d.get("settings", [{}])) or ({},),
            repetitions=int(d.get("repetitions", 100)),
            master_seed=int(d.get("master_seed", 0)),
            cross_validate=bool(d.get("cross_validate", False)),
            cv_folds=int(d.get("cv_folds", 5)),
        )


METRICS = ("accuracy", "auc", "fi")


def _one_repetition(args) -> dict:
    """Train every model on fresh data for one (setting, repetition) pair."""
    setting_idx, rep, data_spec, models, do_cv, folds = args
    train_ds, test_ds = gen_gaussian_clusters(data_spec)
    out = {"setting": setting_idx, "rep": rep, "seed": data_spec.seed, "models": {}}
    erm_cache: dict = {}
    reg_cache: dict = {}
    for m in models:
        spec = m.train
        try:
            if do_cv:
                # the regularizer is tuned on ERM and shared; each model keeps its own target
                key = (spec.loss, spec.feature_map, spec.norm)
                if key not in reg_cache:
                    erm_spec = spec.with_(ambiguity=Ambiguity.ERM)
                    reg_cache[key] = cross_validate(train_ds, erm_spec, folds=folds, seed=data_spec.seed).spec.reg
                spec = spec.with_(reg=reg_cache[key])
            key = (spec.loss, spec.reg, spec.feature_map, spec.norm)
            if key not in erm_cache:
                erm_cache[key] = train_erm(train_ds, spec.loss, spec.reg, spec.solver,
                                           spec.feature_map, spec.norm)
            erm = erm_cache[key]
            if m.is_erm:
                model, info = erm.model, {"objective": erm.objective}
            else:
                res = train(train_ds, spec, erm=erm)
                model, info = res.model, {"k_star": res.k_star, "tau": res.tau}
            row = evaluate_model(model, test_ds)
            row.update(info)
            row["ok"] = True
        except (TargetTooTight, FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
            row = {"ok": False, "error": f"{type(exc).__name__}: {exc}"}
        out["models"][m.name] = row
    return out


def _workers(n_tasks: int) -> int:
    cap = os.environ.get("FRAGILITY_THREADS")
    cpu = os.cpu_count() or 1
    w = min(cpu, int(cap)) if cap else cpu
    return max(1, min(w, n_tasks))


def _ci(values: np.ndarray) -> tuple[float, float, float]:
    """Mean and normal-approximation 95% interval."""
    n = values.size
    if n == 0:
        return math.nan, math.nan, math.nan
    mean = float(np.mean(values))
    if n == 1 or not np.all(np.isfinite(values)):
        return mean, mean, mean
    half = 1.959963984540054 * float(np.std(values, ddof=1)) / math.sqrt(n)
    return mean, mean - half, mean + half


@dataclass
class EvalReport:
    spec: BenchSpec
    runs: list[dict]

    def values(self, setting: int, model: str, metric: str, finite_only: bool = False) -> np.ndarray:
        """Per-repetition values (successful runs, in repetition order)."""
        vals = [r["models"][model][metric] for r in self.runs
                if r["setting"] == setting and r["models"][model].get("ok")]
        arr = np.asarray(vals, dtype=float)
        return arr[np.isfinite(arr)] if finite_only else arr

    def paired(self, setting: int, model_a: str, model_b: str, metric: str):
        """Paired per-repetition values where both models succeeded."""
        a, b = [], []
        for r in self.runs:
            if r["setting"] != setting:
                continue
            ra, rb = r["models"][model_a], r["models"][model_b]
            if ra.get("ok") and rb.get("ok"):
                a.append(ra[metric])
                b.append(rb[metric])
        return np.asarray(a, dtype=float), np.asarray(b, dtype=float)

    def failures(self, setting: int, model: str) -> int:
        return sum(1 for r in self.runs if r["setting"] == setting and not r["models"][model].get("ok"))

    def rows(self) -> list[dict]:
        out = []
        for si, setting in enumerate(self.spec.settings):
            resolved = replace(self.spec.data, **setting)
            for m in self.spec.models:
                row = {"setting": si, "samples_per_class": resolved.samples_per_class,
                       "p_flip": resolved.p_flip, "class_count": resolved.class_count,
                       "model": m.name}
                ok = self.values(si, m.name, "accuracy").size
                row["repetitions"] = ok
                row["failures"] = self.failures(si, m.name)
                for metric in METRICS:
                    vals = self.values(si, m.name, metric)
                    fin = vals[np.isfinite(vals)]
                    mean, lo, hi = _ci(fin)
                    row[f"{metric}_mean"], row[f"{metric}_ci_low"], row[f"{metric}_ci_high"] = mean, lo, hi
                    if metric == "fi":
                        row["fi_infinite"] = int(vals.size - fin.size)
                out.append(row)
        return out

    def to_csv(self) -> str:
        rows = self.rows()
        return _csv(rows, list(rows[0]))

    def to_long_csv(self) -> str:
        """One row per (setting, model, metric): plot-ready curves against n and p_flip."""
        long = []
        for r in self.rows():
            for metric in METRICS:
                long.append({"samples_per_class": r["samples_per_class"], "p_flip": r["p_flip"],
                             "model": r["model"], "metric": metric, "mean": r[f"{metric}_mean"],
                             "ci_low": r[f"{metric}_ci_low"], "ci_high": r[f"{metric}_ci_high"]})
        return _csv(long, list(long[0]))

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "summary": _jsonable(self.rows()),
                "runs": _jsonable(self.runs)}

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "report.csv", out / "curves.csv", out / "report.json"]
        paths[0].write_text(self.to_csv())
        paths[1].write_text(self.to_long_csv())
        paths[2].write_text(dumps(self.to_dict()))
        return paths


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def _csv(rows: list[dict], header: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r[h]) for h in header])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def run_comparison(spec: BenchSpec, workers: int | None = None) -> EvalReport:
    """Every (setting, repetition) pair on fresh seeded data; results ordered by setting then repetition."""
    tasks = []
    for si, setting in enumerate(spec.settings):
        for rep in range(spec.repetitions):
            d = replace(spec.data, **setting, seed=repetition_seed(spec.master_seed, rep))
            tasks.append((si, rep, d, spec.models, spec.cross_validate, spec.cv_folds))
    n = workers if workers is not None else _workers(len(tasks))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if n <= 1:
            runs = [_one_repetition(t) for t in tasks]
        else:
            with ProcessPoolExecutor(max_workers=n) as pool:
                runs = list(pool.map(_one_repetition, tasks, chunksize=max(1, len(tasks) // (4 * n))))
    return EvalReport(spec, runs)


# ---------------------------------------------------------------- cross-validation

ALPHA_GRID = (0.001, 0.01, 0.1, 1.0)
RATIO_GRID = (1.1, 1.2)
RATIO_GRID_REAL = (1.03, 1.07, 1.1)


@dataclass
class CvResult:
    spec: TrainSpec
    scores: list[tuple[dict, float]]
    best_index: int


def stratified_folds(labels, folds: int, seed: int) -> list[np.ndarray]:
    labels = np.asarray(labels)
    if labels.size < folds:
        raise ValueError(f"{labels.size} samples cannot fill {folds} folds")
    counts = np.bincount(labels)
    if counts[counts > 0].min() < folds:
        raise ValueError(f"smallest class has {counts[counts > 0].min()} samples, fewer than {folds} folds")
    skf = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed % (2 ** 32))
    return [val for _, val in skf.split(np.zeros(labels.size), labels)]


def _val_loss(dataset: Dataset, spec: TrainSpec, train_idx, val_idx) -> float:
    tr, va = dataset.subset(train_idx), dataset.subset(val_idx)
    erm = train_erm(tr, spec.loss, spec.reg, spec.solver, spec.feature_map, spec.norm)
    if spec.ambiguity is Ambiguity.ERM:
        B = erm.weights
    else:
        try:
            B = train(tr, spec, erm=erm).weights
        except TargetTooTight:
            return math.inf
    Phi = spec.feature_map(va.features)
    return float(np.mean(losses(spec.loss, B, Phi, va.labels)))


def cross_validate(dataset: Dataset, spec: TrainSpec, alphas: Sequence[float] | None = None,
                   reg_kinds: Sequence[str] = ("l1", "l2"), ratios: Sequence[float] | None = None,
                   folds: int = 5, seed: int = 0) -> CvResult:
    """Grid search by mean validation loss; ties go to the earliest grid entry.

    The regularizer is chosen on the ERM baseline and then kept fixed while a
    fragility model picks its target ratio.
    """
    alphas = ALPHA_GRID if alphas is None else tuple(alphas)
    val_folds = stratified_folds(dataset.labels, folds, seed)
    all_idx = np.arange(dataset.n_samples)
    splits = [(np.setdiff1d(all_idx, v), v) for v in val_folds]

    def score(s: TrainSpec) -> float:
        return float(np.mean([_val_loss(dataset, s, tr, va) for tr, va in splits]))

    erm_spec = spec.with_(ambiguity=Ambiguity.ERM)
    reg_grid = [Regularizer(kind, a) for a in alphas for kind in reg_kinds]
    scores = []
    best, best_val = 0, math.inf
    for i, reg in enumerate(reg_grid):
        v = score(erm_spec.with_(reg=reg)) if len(reg_grid) > 1 else 0.0
        scores.append(({"reg": reg.to_dict()}, v))
        if v < best_val:
            best, best_val = i, v
    chosen = spec.with_(reg=reg_grid[best])
    if spec.ambiguity is Ambiguity.ERM or spec.target is not None:
        return CvResult(chosen, scores, best)
    ratios = RATIO_GRID if ratios is None else tuple(ratios)
    offset = len(scores)
    best_r, best_val = 0, math.inf
    for j, lam in enumerate(ratios):
        v = score(chosen.with_(target_ratio=lam)) if len(ratios) > 1 else 0.0
        scores.append(({"reg": reg_grid[best].to_dict(), "target_ratio": lam}, v))
        if v < best_val:
            best_r, best_val = j, v
    return CvResult(chosen.with_(target_ratio=ratios[best_r]), scores, offset + best_r)


# ---------------------------------------------------------------- CSV ingestion

MISSING = {"", "na", "nan", "null", "none", "?"}


@dataclass
class CsvLoadReport:
    dataset: Dataset
    columns: list[str]
    class_names: list[str]
    rejected_rows: int
    feature_dim: int


def _is_number(s: str) -> bool:
    try:
        return math.isfinite(float(s))
    except ValueError:
        return False


def load_csv_dataset(path, label_column: str = "label") -> CsvLoadReport:
    """Numeric columns as floats, other columns one-hot in order of first appearance.

    Rows with a missing entry are dropped and counted. Class names map to
    indices in order of first appearance, or in numeric order when every
    label parses as a number.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValueError(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ValueError("empty CSV file") from None
    if label_column not in header:
        raise ValueError(f"no {label_column!r} column in header")
    if len(set(header)) != len(header):
        raise ValueError("duplicate column names")
    rows, rejected = [], 0
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ValueError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        cells = [c.strip() for c in row]
        if any(c.lower() in MISSING for c in cells):
            rejected += 1
            continue
        rows.append(cells)
    if not rows:
        raise ValueError("no complete rows")
    li = header.index(label_column)
    cols, names = [], []
    for j, name in enumerate(header):
        if j == li:
            continue
        raw = [r[j] for r in rows]
        if all(_is_number(v) for v in raw):
            cols.append(np.array([float(v) for v in raw])[:, None])
            names.append(name)
        else:
            cats = list(dict.fromkeys(raw))
            cols.append(np.array([[float(v == c) for c in cats] for v in raw]))
            names.extend(f"{name}={c}" for c in cats)
    raw_labels = [r[li] for r in rows]
    class_names = list(dict.fromkeys(raw_labels))
    if all(_is_number(v) for v in class_names):
        class_names.sort(key=float)
    index = {c: i for i, c in enumerate(class_names)}
    labels = [index[v] for v in raw_labels]
    X = np.hstack(cols) if cols else np.zeros((len(rows), 0))
    if X.shape[1] == 0:
        raise ValueError("no feature columns")
    ds = Dataset(X, np.array(labels), max(len(class_names), 1))
    return CsvLoadReport(ds, names, class_names, rejected, X.shape[1])
