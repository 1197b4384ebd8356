"""Command-line interface.

Exit codes: 0 success, 2 bad input or config, 3 infinite index under
``--strict``, 4 target infeasible.
"""

from __future__ import annotations

import csv
import io
import json
import math
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import click

from . import __version__
from .core.metrics import ErrorSample, ranking_errors
from .experiments import (BenchSpec, SyntheticSpec, cross_validate, evaluate_model,
                          gen_gaussian_clusters, load_csv_dataset, run_comparison)
from .fi import (FiKlConfig, FiWConfig, INFINITY_CAP, solve_fi_kl, solve_fi_w, tail_bound,
                 var_bound)
from .nn import NnTrainSpec, evaluate_nn, train_nn_fi
from .training.audits import flip_attack_bound, worst_flip_increase
from .training.spec import TargetTooTight, TrainResult, TrainSpec, dumps
from .training.trainers import train, train_erm

EXIT_INPUT, EXIT_STRICT, EXIT_INFEASIBLE = 2, 3, 4


class InputError(click.ClickException):
    exit_code = EXIT_INPUT


def _echo_config(cfg: dict) -> None:
    click.echo("# config " + json.dumps(cfg, sort_keys=True, default=str), err=True)


def _load_json(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc


def _write(path, text: str) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text)


def _num(v) -> str:
    return "%.17g" % v


# ------------------------------------------------------------------ eval-fi

def read_error_file(path, tau: float) -> ErrorSample:
    """``score,label`` files give ranking errors (label 1 positive); ``error`` files give raw values."""
    try:
        rows = list(csv.reader(io.StringIO(Path(path).read_text())))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if len(rows) < 2:
        raise InputError(f"{path}: need a header and at least one row")
    header = [h.strip().lower() for h in rows[0]]
    body = [r for r in rows[1:] if r and any(c.strip() for c in r)]
    try:
        if "score" in header and "label" in header:
            si, li = header.index("score"), header.index("label")
            pos = [float(r[si]) for r in body if r[li].strip() in ("1", "pos", "+1", "positive")]
            neg = [float(r[si]) for r in body if r[li].strip() not in ("1", "pos", "+1", "positive")]
            return ranking_errors(pos, neg, tau)
        if "error" in header:
            ei = header.index("error")
            return ErrorSample([float(r[ei]) for r in body], tau, kind="ranking")
    except (ValueError, IndexError) as exc:
        raise InputError(f"{path}: {exc}") from exc
    raise InputError(f"{path}: header must contain 'score,label' or 'error'")


@click.group()
@click.version_option(__version__)
def main():
    """Fragility Index metrics, training and audits."""


@main.command("eval-fi")
@click.argument("files", nargs=-1, type=click.Path())
@click.option("--config", type=click.Path(), help="JSON with tau, metric, upper_bound, thetas.")
@click.option("--tau", type=float, default=None)
@click.option("--metric", type=click.Choice(["kl", "wasserstein"]), default=None)
@click.option("--upper-bound", type=float, default=None, help="Error upper bound for the Wasserstein index.")
@click.option("--out", type=click.Path(), default=None)
@click.option("--strict", is_flag=True, help="Exit 3 when an index is infinite.")
@click.option("--verbose", is_flag=True)
def eval_fi(files, config, tau, metric, upper_bound, out, strict, verbose):
    """Fragility Index of score or error files, with tail and VaR bounds."""
    cfg = _load_json(config)
    files = list(files) or cfg.get("files", [])
    cfg = {"files": files, "tau": tau if tau is not None else float(cfg.get("tau", 0.0)),
           "metric": metric or cfg.get("metric", "kl"),
           "upper_bound": upper_bound if upper_bound is not None else cfg.get("upper_bound"),
           "thetas": cfg.get("thetas", [0.1, 0.25, 0.5, 1.0]), "alphas": [0.05, 0.01]}
    _echo_config(cfg)
    if not files:
        raise InputError("no input files")
    if cfg["metric"] == "wasserstein" and cfg["upper_bound"] is None:
        raise InputError("the Wasserstein index needs --upper-bound")
    reports = []
    for f in files:
        sample = read_error_file(f, cfg["tau"])
        try:
            if cfg["metric"] == "kl":
                res = solve_fi_kl(sample, FiKlConfig())
            else:
                res = solve_fi_w(sample, FiWConfig(float(cfg["upper_bound"])))
        except ValueError as exc:
            raise InputError(str(exc)) from exc
        rec = {"file": str(f), **res.to_dict(INFINITY_CAP)}
        thetas = [cfg["tau"] + t for t in cfg["thetas"]]
        rec["tail"] = [{"theta": th, "bound": tail_bound(res.value, cfg["tau"], th),
                        "empirical": sample.tail_fraction(th)} for th in thetas]
        rec["var"] = [{"alpha": a, "bound": min(var_bound(res.value, cfg["tau"], a), INFINITY_CAP)}
                      for a in cfg["alphas"]]
        reports.append((rec, res))
        click.echo(f"{f}: FI_{cfg['metric']} = {_num(res.value) if res.finite else 'inf'}"
                   f" ({res.status}, {res.iterations} iterations)")
        if verbose:
            for t in rec["tail"]:
                click.echo(f"  P(eps >= {_num(t['theta'])}) <= {_num(t['bound'])}"
                           f"  empirical {_num(t['empirical'])}")
            for v in rec["var"]:
                click.echo(f"  VaR_{1 - v['alpha']:.2f} <= {_num(v['bound'])}")
    summary = {"reports": [r for r, _ in reports]}
    if len(reports) == 2 and all(r.finite and r.value > 0 for _, r in reports):
        summary["ratio"] = reports[1][1].value / reports[0][1].value
        click.echo(f"ratio {files[1]} / {files[0]} = {_num(summary['ratio'])}")
    if out:
        _write(out, dumps(summary))
    if strict and any(not r.finite for _, r in reports):
        click.echo("infinite Fragility Index (mean error is not below the target)", err=True)
        sys.exit(EXIT_STRICT)


# ------------------------------------------------------------------ train

def _train_config(cfg: dict):
    if "data" not in cfg:
        raise InputError("config needs a 'data' CSV path or a 'synthetic' spec")
    try:
        spec = TrainSpec.from_dict(cfg.get("train", {}))
    except (ValueError, TypeError, KeyError) as exc:
        raise InputError(f"invalid train spec: {exc}") from exc
    return spec


def _load_data(cfg: dict, key: str, base: Path, seed: int | None):
    src = cfg.get(key)
    if src is None:
        return None
    try:
        if isinstance(src, dict):
            s = SyntheticSpec.from_dict(src)
            if seed is not None:
                s = replace(s, seed=seed)
            tr, te = gen_gaussian_clusters(s)
            return tr if key == "data" else te
        p = Path(src)
        if not p.is_absolute():
            p = base / p
        if src == "bundled:toy":
            p = Path(__file__).parent / "data" / "toy_clusters.csv"
        return load_csv_dataset(p, cfg.get("label_column", "label")).dataset
    except (ValueError, TypeError) as exc:
        raise InputError(f"cannot load {key}: {exc}") from exc


@main.command("train")
@click.option("--config", type=click.Path(), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--seed", type=int, default=None, help="Overrides the seed of a synthetic data spec.")
@click.option("--verbose", is_flag=True)
def train_cmd(config, out, seed, verbose):
    """Train an ERM or fragility-minimizing model from a JSON config."""
    cfg = _load_json(config)
    base = Path(config).parent
    spec = _train_config(cfg)
    _echo_config({"config": cfg, "train": spec.to_dict(), "seed": seed})
    data = _load_data(cfg, "data", base, seed)
    test = _load_data(cfg, "test_data", base, seed)
    if test is None and isinstance(cfg.get("data"), dict):
        test = _load_data({**cfg, "test_data": cfg["data"]}, "test_data", base, seed)
    failure = None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", UserWarning)
        try:
            erm = train_erm(data, spec.loss, spec.reg, spec.solver, spec.feature_map, spec.norm)
            if spec.ambiguity.value == "erm":
                tau = erm.objective if spec.target is None else spec.target
                result = TrainResult(0.0, erm.weights, erm.objective - tau, False, tau, spec,
                                     diagnostics={"method": erm.method, "iterations": erm.iterations})
            else:
                result = train(data, spec, erm=erm)
        except (TargetTooTight, ValueError) as exc:
            failure = exc
    for w in caught:
        if issubclass(w.category, UserWarning):
            click.echo(f"warning: {w.message}", err=True)
    if isinstance(failure, TargetTooTight):
        click.echo(f"infeasible target: {failure}", err=True)
        sys.exit(EXIT_INFEASIBLE)
    if failure is not None:
        raise InputError(str(failure)) from failure
    doc = result.to_dict()
    doc["erm_objective"] = erm.objective
    doc["train_metrics"] = evaluate_model(result.model, data)
    if test is not None:
        doc["test_metrics"] = evaluate_model(result.model, test)
    _write(out, dumps(_finite(doc)))
    click.echo(f"k* = {_num(result.k_star)}  tau = {_num(result.tau)}  "
               f"slack = {_num(result.feasibility_slack)}  active = {result.active}")
    if verbose:
        click.echo(json.dumps(doc["train_metrics"]))


def _finite(obj):
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return INFINITY_CAP if obj > 0 else -INFINITY_CAP
    return obj


# ------------------------------------------------------------------ attack-audit

@main.command("attack-audit")
@click.option("--config", type=click.Path(), required=True,
              help="JSON with 'result' (TrainResult file), 'data' (training CSV) and 'p' grid.")
@click.option("--out", type=click.Path(), default=None)
@click.option("--exhaustive", is_flag=True, help="Append brute-force worst flips (N <= 12).")
@click.option("--verbose", is_flag=True)
def attack_audit(config, out, exhaustive, verbose):
    """Label-flip bound ``p * max||phi|| * k*`` over a grid of flip rates."""
    cfg = _load_json(config)
    base = Path(config).parent
    _echo_config({"config": cfg, "exhaustive": exhaustive})
    try:
        rp = Path(cfg["result"])
        result = TrainResult.load(rp if rp.is_absolute() else base / rp)
    except (KeyError, OSError, ValueError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot load result: {exc}") from exc
    data = _load_data(cfg, "data", base, None)
    if data is None:
        raise InputError("config needs the training 'data'")
    grid = [float(p) for p in cfg.get("p", [0.0, 0.05, 0.1, 0.2])]
    rows = []
    try:
        for p in grid:
            row = {"p": p, "bound": flip_attack_bound(result, p, data)}
            if exhaustive:
                if data.n_samples > 12:
                    raise ValueError("exhaustive enumeration needs N <= 12")
                flips = int(math.floor(p * data.n_samples + 1e-12))
                row["exhaustive"] = worst_flip_increase(result, data, flips) if flips else 0.0
            rows.append(row)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    header = list(rows[0])
    text = ",".join(header) + "\n" + "".join(",".join(_num(r[h]) for h in header) + "\n" for r in rows)
    click.echo(text, nl=False)
    if out:
        _write(out, text)


# ------------------------------------------------------------------ synth-bench

@main.command("synth-bench")
@click.option("--config", type=click.Path(), default=None, help="BenchSpec JSON.")
@click.option("--out", type=click.Path(), required=True, help="Output directory.")
@click.option("--seed", type=int, default=None, help="Master seed.")
@click.option("--repetitions", type=int, default=None)
@click.option("--verbose", is_flag=True)
def synth_bench(config, out, seed, repetitions, verbose):
    """Synthetic comparison of ERM and fragility models; writes CSV and JSON summaries."""
    cfg = _load_json(config)
    try:
        spec = BenchSpec.from_dict(cfg)
        if seed is not None:
            spec = replace(spec, master_seed=seed)
        if repetitions is not None:
            spec = replace(spec, repetitions=repetitions)
    except (ValueError, TypeError, KeyError) as exc:
        raise InputError(f"invalid bench spec: {exc}") from exc
    _echo_config(spec.to_dict())
    report = run_comparison(spec)
    paths = report.write(out)
    for p in paths:
        click.echo(f"wrote {p}")
    if verbose:
        click.echo(report.to_csv(), nl=False)


# ------------------------------------------------------------------ nn-demo

@main.command("nn-demo")
@click.option("--config", type=click.Path(), default=None,
              help="JSON with 'nn' (network spec) and 'data' (synthetic spec).")
@click.option("--out", type=click.Path(), required=True, help="Output directory.")
@click.option("--seed", type=int, default=None)
@click.option("--verbose", is_flag=True)
def nn_demo(config, out, seed, verbose):
    """Train a small network with and without the fragility penalty."""
    cfg = _load_json(config)
    try:
        nn_spec = NnTrainSpec.from_dict(cfg.get("nn", {}))
        data_spec = SyntheticSpec.from_dict(cfg.get("data", {"class_count": 4, "samples_per_class": 100,
                                                            "test_per_class": 500}))
    except (ValueError, TypeError) as exc:
        raise InputError(f"invalid nn-demo config: {exc}") from exc
    if seed is not None:
        nn_spec = replace(nn_spec, seed=seed)
        data_spec = replace(data_spec, seed=seed)
    _echo_config({"nn": nn_spec.to_dict(), "data": data_spec.to_dict()})
    tr, te = gen_gaussian_clusters(data_spec)
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    summary = {}
    try:
        for name, s in (("baseline", replace(nn_spec, lambda0=math.inf, alpha=0.0)), ("fi", nn_spec)):
            model, hist = train_nn_fi(tr, s, validation=te)
            model.save(outdir / f"{name}_model.json")
            rows = hist.epochs
            header = list(rows[0])
            (outdir / f"{name}_epochs.csv").write_text(
                ",".join(header) + "\n" + "".join(",".join(_num(r[h]) for h in header) + "\n" for r in rows))
            summary[name] = evaluate_nn(model, te)
    except FloatingPointError as exc:
        raise InputError(str(exc)) from exc
    _write(outdir / "summary.json", dumps(_finite(summary)))
    for name, m in summary.items():
        click.echo(f"{name}: accuracy {m['accuracy']:.4f}  auc {m['auc']:.4f}  fi {m['fi']:.6g}")


# ------------------------------------------------------------------ cv

@main.command("cv")
@click.option("--config", type=click.Path(), required=True,
              help="JSON with 'data', 'train', optional 'alphas', 'ratios', 'folds'.")
@click.option("--out", type=click.Path(), default=None)
@click.option("--seed", type=int, default=0)
@click.option("--verbose", is_flag=True)
def cv(config, out, seed, verbose):
    """Five-fold grid search over the regularizer and the target ratio."""
    cfg = _load_json(config)
    base = Path(config).parent
    spec = _train_config(cfg)
    _echo_config({"config": cfg, "seed": seed})
    data = _load_data(cfg, "data", base, None)
    try:
        res = cross_validate(data, spec, alphas=cfg.get("alphas"), ratios=cfg.get("ratios"),
                             folds=int(cfg.get("folds", 5)), seed=seed)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    doc = {"best": res.spec.to_dict(), "best_index": res.best_index,
           "grid": [{"params": p, "validation_loss": v} for p, v in res.scores]}
    text = dumps(_finite(doc))
    if out:
        _write(out, text)
    click.echo(f"best: reg {res.spec.reg.kind} alpha {res.spec.reg.alpha}"
               + (f" target_ratio {res.spec.target_ratio}" if res.spec.target_ratio else ""))
    if verbose:
        click.echo(text, nl=False)


if __name__ == "__main__":
    main()
