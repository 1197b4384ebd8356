"""End-to-end acceptance checks, one test per criterion, each under its time budget."""

import json
import math
import time
from contextlib import contextmanager
from dataclasses import replace
from importlib.resources import files

import numpy as np
import pytest
from click.testing import CliRunner
from scipy.special import logsumexp
from scipy.stats import wilcoxon

from fragility.cli import main
from fragility.core import ErrorSample, LossKind, NormKind, Regularizer, auc
from fragility.core import max_pairwise_dual_norm, threshold_accuracy
from fragility.experiments import BenchSpec, SyntheticSpec, default_models, gen_gaussian_clusters, run_comparison
from fragility.fi import empirical_var, fi_kl, fi_w, solve_fi_kl, tail_bound, var_bound
from fragility.nn import MlpModel, NnTrainSpec, evaluate_nn, grad_check, train_nn_fi
from fragility.training import (TrainSpec, audit_rs_constraint, check_tail_certificate, flip_attack_bound,
                                train_kl, train_wass_ce, worst_flip_increase)

import oracles
from conftest import ACCEPTANCE, clusters, random_instance

DATA = files("fragility") / "data"


@contextmanager
def criterion(n: int, limit: float | None):
    start = time.perf_counter()
    ok = False
    try:
        yield
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        within = limit is None or elapsed < limit
        status = "PASS" if ok and within else "FAIL"
        budget = f" / {limit:.0f} s" if limit else ""
        line = f"criterion {n:2d}: {status} ({elapsed:.2f} s{budget})"
        ACCEPTANCE[n] = line
        print(line)
    assert within, f"criterion {n} took {elapsed:.1f} s, budget {limit} s"


def _scores(path):
    rows = np.genfromtxt(path, delimiter=",", names=True)
    return rows["score"][rows["label"] == 1], rows["score"][rows["label"] == 0]


# ---------------------------------------------------------------- 1

def test_criterion_01_toy_example():
    with criterion(1, 1.0):
        fis = []
        for name in ("classifier_a.csv", "classifier_b.csv"):
            pos, neg = _scores(DATA / name)
            assert threshold_accuracy(pos, neg) == 0.75
            assert auc(pos, neg) == 0.75
            res = solve_fi_kl(ErrorSample.from_scores(pos, neg))
            errors = (neg[None, :] - pos[:, None]).ravel()
            assert abs(res.value - oracles.fi_kl_grid(errors, 0.0, step=1e-6)) <= 1e-6
            fis.append(res.value)
        assert fis[1] > fis[0]
        assert 1.8 <= fis[1] / fis[0] <= 2.6


# ---------------------------------------------------------------- 2

def _random_sample(rng, finite=True):
    while True:
        n = int(rng.integers(2, 40))
        v = rng.normal(rng.uniform(-1, 0.5), rng.uniform(0.2, 2), n)
        if not finite or (v.max() > 0 and v.mean() < 0):
            return v


def test_criterion_02_fi_properties():
    rng = np.random.default_rng(2)
    with criterion(2, 30.0):
        for _ in range(500):  # positive homogeneity
            v, a, tau = _random_sample(rng), rng.uniform(0.05, 20), 0.0
            assert fi_kl(ErrorSample(a * v, a * tau)) == pytest.approx(a * fi_kl(ErrorSample(v, tau)), rel=1e-6)
        for _ in range(500):  # subadditivity on shared pairs
            v, w = _random_sample(rng, False), _random_sample(rng, False)
            m = min(v.size, w.size)
            v, w = v[:m], w[:m]
            t1, t2 = rng.uniform(-0.5, 0.5, 2)
            lhs = fi_kl(ErrorSample(v + w, t1 + t2))
            assert lhs <= fi_kl(ErrorSample(v, t1)) + fi_kl(ErrorSample(w, t2)) + 1e-8
        for _ in range(500):  # prorobustness
            v = _random_sample(rng, False)
            assert fi_kl(ErrorSample(v, v.max() + rng.uniform(0, 1))) == 0.0
            assert fi_kl(ErrorSample(v, v.max())) == 0.0
        for _ in range(500):  # antifragility
            v = _random_sample(rng, False)
            assert fi_kl(ErrorSample(v, v.mean() - rng.uniform(1e-6, 1))) == math.inf
        for _ in range(500):  # tau tradeoff
            v = _random_sample(rng, False)
            fis = [fi_kl(ErrorSample(v, t)) for t in np.linspace(v.mean() - 0.2, v.max() + 0.2, 12)]
            assert all(b <= a for a, b in zip(fis, fis[1:]))
        for _ in range(500):  # monotonicity, both discrepancies
            v = _random_sample(rng, False)
            w = v + rng.uniform(0, 1, v.size)
            ub = w.max() + rng.uniform(0, 1)
            assert fi_kl(ErrorSample(v)) <= fi_kl(ErrorSample(w)) + 1e-10
            assert fi_w(ErrorSample(v), ub) <= fi_w(ErrorSample(w), ub) + 1e-10


# ---------------------------------------------------------------- 3

def test_criterion_03_tail_and_var():
    rng = np.random.default_rng(3)
    with criterion(3, 30.0):
        for _ in range(100):
            tau = float(rng.uniform(-0.3, 0.3))
            v = _random_sample(rng) + tau
            s = ErrorSample(v, tau)
            fi = fi_kl(s)
            assert 0 < fi < math.inf
            thetas = np.concatenate([np.linspace(tau, v.max() + 0.5, 50), v[v >= tau]])
            assert np.all(s.tail_fraction(thetas) <= tail_bound(fi, tau, thetas) + 1e-12)
            for alpha in (0.05, 0.01):
                assert empirical_var(s, alpha) <= var_bound(fi, tau, alpha)


# ---------------------------------------------------------------- 4

def test_criterion_04_wasserstein_closed_form():
    rng = np.random.default_rng(4)
    with criterion(4, 30.0):
        for _ in range(200):
            v = rng.normal(rng.uniform(-1.5, 0.5), 1.0, int(rng.integers(1, 30)))
            tau = float(rng.uniform(-0.5, 0.5))
            ub = float(v.max() + rng.uniform(0, 2))
            got, want = fi_w(ErrorSample(v, tau), ub), oracles.fi_w_grid(v, tau, ub, step=1e-4)
            assert got == want or abs(got - want) <= 1e-4


# ---------------------------------------------------------------- 5

def test_criterion_05_kl_training():
    alpha = 0.01
    d, _ = gen_gaussian_clusters(SyntheticSpec(samples_per_class=25, test_per_class=10, seed=0))
    with criterion(5, 120.0):
        spec = TrainSpec(loss=LossKind("hinge"), reg=Regularizer("l2", alpha))
        Phi = spec.feature_map(d.features)
        tau = 1.1 * oracles.erm_hinge_binary(Phi, d.labels, alpha)
        res = train_kl(d, spec.with_(target_ratio=None, target=tau), tau=tau)
        grid_k = oracles.kl_k_grid(Phi, d.labels, alpha, tau, step=1e-3)
        assert abs(res.k_star - grid_k) <= 2e-3
        assert res.feasibility_slack <= 1e-5
        cert = check_tail_certificate(res, d)
        assert cert["ok"] and cert["fi_ok"]


# ---------------------------------------------------------------- 6

def test_criterion_06_wasserstein_ce_exactness():
    rng = np.random.default_rng(6)
    with criterion(6, 120.0):
        for _ in range(20):
            d = random_instance(rng, n_max=12, c_max=3)
            Phi = d.features
            gamma = 1.05 * float(np.max(np.linalg.norm(Phi, axis=1)))
            spec = TrainSpec(loss=LossKind("cross_entropy"), ambiguity="wasserstein", target_ratio=1.2,
                             gamma=gamma, reg=Regularizer("l2", 0.01))
            res = train_wass_ce(d, spec)
            reg = spec.reg.value(res.weights)
            brute = oracles.wass_ce_worst_case(res.weights, Phi, d.labels, res.k_star, gamma, reg, res.tau,
                                               joint=True)
            reform = float(np.mean(oracles.ce_losses(res.weights, Phi, d.labels))) + reg - res.tau
            assert abs(brute - reform) <= 1e-6
            assert max_pairwise_dual_norm(res.weights, NormKind.TWO) <= res.k_star + 1e-6


# ---------------------------------------------------------------- 7

def test_criterion_07_label_flip_bound():
    rng = np.random.default_rng(7)
    with criterion(7, 60.0):
        for _ in range(20):
            d = random_instance(rng, n_max=12, c_max=3)
            res = train_wass_ce(d, TrainSpec(loss=LossKind("cross_entropy"), ambiguity="wasserstein",
                                             target_ratio=1.2))
            worst = oracles.single_flip_increase(res.weights, d.features, d.labels)
            assert worst == pytest.approx(worst_flip_increase(res, d, 1), abs=1e-12)
            assert worst <= flip_attack_bound(res, 1 / d.n_samples, d) + 1e-12


# ---------------------------------------------------------------- 8

def test_criterion_08_generalization_audit():
    rng = np.random.default_rng(8)
    with criterion(8, 60.0):
        for seed in range(5):
            d = clusters(12, seed=seed)
            res = train_kl(d, TrainSpec(loss=LossKind("hinge"), target_ratio=1.1, reg=Regularizer("l2", 0.01)))
            for q in rng.dirichlet(np.ones(d.n_samples), 200):
                assert audit_rs_constraint(res, d, q).slack <= 1e-5


# ---------------------------------------------------------------- 9

def _one_sided(a, b, alternative):
    """Wilcoxon signed-rank on ``a - b``; infinities become a large finite value."""
    cap = 1e12
    a, b = np.minimum(a, cap), np.minimum(b, cap)
    return wilcoxon(a - b, alternative=alternative, zero_method="wilcox").pvalue


def _finite_means(a, b):
    keep = np.isfinite(a) & np.isfinite(b)
    return float(np.mean(a[keep])), float(np.mean(b[keep]))


def test_criterion_09_synthetic_trends():
    # regularizer picked by 5-fold CV on ERM and shared by the fragility models
    spec = BenchSpec(data=SyntheticSpec(samples_per_class=25, test_per_class=1000),
                     models=tuple(default_models()), settings=({"p_flip": 0.0}, {"p_flip": 0.3}),
                     repetitions=100, master_seed=0, cross_validate=True)
    with criterion(9, 900.0):
        rep = run_comparison(spec)
        checks = []
        for label, setting, model, metric, alt in (("a: p_flip=0 FI wasserstein < erm", 0, "wasserstein", "fi", "less"),
                                                   ("b: p_flip=0.3 AUC kl >= erm", 1, "kl", "auc", "greater"),
                                                   ("b: p_flip=0.3 FI wasserstein < erm", 1, "wasserstein", "fi", "less")):
            x, e = rep.paired(setting, model, "erm", metric)
            mx, me = _finite_means(x, e)
            p = _one_sided(x, e, alt)
            ordered = mx < me if alt == "less" else mx >= me
            print(f"  {label}: {mx:.4f} vs {me:.4f}, one-sided p = {p:.3g}")
            checks.append((label, ordered and p < 0.05))
        failed = [label for label, ok in checks if not ok]
        assert not failed, f"orderings not supported at the 5% level: {failed}"


# ---------------------------------------------------------------- 10

def _reference_sgd(dataset, spec):
    """Plain minibatch SGD on cross-entropy plus weight decay, drawing randomness in the library's order."""
    rng = np.random.default_rng(spec.seed)
    X, y = dataset.features, dataset.labels
    m = MlpModel.init(X.shape[1], spec.hidden, dataset.class_count, rng)
    n = X.shape[0]
    for _ in range(spec.epochs):
        order = rng.permutation(n)
        for start in range(0, n, spec.batch_size):
            idx = order[start:start + spec.batch_size]
            xb, yb = X[idx], y[idx]
            Z1 = xb @ m.W1 + m.b1
            H = np.maximum(Z1, 0.0)
            S = H @ m.B + m.b2
            P = np.exp(S - logsumexp(S, axis=1)[:, None])
            P[np.arange(len(idx)), yb] -= 1.0
            P /= len(idx)
            gB = H.T @ P + spec.weight_decay * m.B
            gb2 = P.sum(axis=0)
            dZ1 = (P @ m.B.T) * (Z1 > 0)
            gW1 = xb.T @ dZ1 + spec.weight_decay * m.W1
            gb1 = dZ1.sum(axis=0)
            m.W1 -= spec.learning_rate * gW1
            m.b1 -= spec.learning_rate * gb1
            m.B -= spec.learning_rate * gB
            m.b2 -= spec.learning_rate * gb2
    return m


def test_criterion_10_nn_regularizer():
    data = SyntheticSpec(class_count=4, samples_per_class=100, test_per_class=500)
    with criterion(10, 300.0):
        train, _ = gen_gaussian_clusters(data)
        spec = NnTrainSpec(lambda0=2.0, alpha=3.0)
        for seed in range(3):
            model = MlpModel.init(2, spec.hidden, 4, np.random.default_rng(seed))
            model.k = 0.05
            assert grad_check(model, train.features[:8], train.labels[:8], spec, n_coords=30) <= 1e-5

        off = NnTrainSpec(lambda0=math.inf, alpha=0.0, epochs=5, seed=4)
        got, _ = train_nn_fi(train, off, record_metrics=False)
        ref = _reference_sgd(train, off)
        for name in ("W1", "b1", "B", "b2"):
            assert np.array_equal(got.params()[name], getattr(ref, name))

        base_fi, reg_fi = [], []
        for seed in range(10):
            tr, te = gen_gaussian_clusters(replace(data, seed=seed))
            fi_spec = NnTrainSpec(seed=seed)
            for spec_, out in ((replace(fi_spec, lambda0=math.inf, alpha=0.0), base_fi), (fi_spec, reg_fi)):
                model, _ = train_nn_fi(tr, spec_, record_metrics=False)
                out.append(evaluate_nn(model, te)["fi"])
        print(f"  median test FI: baseline {np.median(base_fi):.4g}, regularized {np.median(reg_fi):.4g}")
        assert np.median(reg_fi) <= np.median(base_fi)


# ---------------------------------------------------------------- 11

def _snapshot(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_11_determinism(tmp_path):
    cfg = {
        "train.json": {"data": "bundled:toy", "train": {"loss": "hinge", "ambiguity": "kl", "target_ratio": 1.1,
                                                        "reg": {"kind": "l2", "alpha": 0.01}}},
        "ce.json": {"data": "bundled:toy", "train": {"loss": "cross_entropy", "ambiguity": "wasserstein",
                                                     "target_ratio": 1.2}},
        "bench.json": {"data": {"samples_per_class": 10, "test_per_class": 50},
                       "settings": [{"p_flip": 0.0}, {"p_flip": 0.3}], "repetitions": 2},
        "nn.json": {"nn": {"epochs": 3, "hidden": 8},
                    "data": {"class_count": 4, "samples_per_class": 20, "test_per_class": 20}},
        "cv.json": {"data": "bundled:toy", "train": {"loss": "hinge", "ambiguity": "kl", "target_ratio": 1.1},
                    "alphas": [0.01, 0.1], "ratios": [1.1, 1.2]},
    }
    for name, obj in cfg.items():
        (tmp_path / name).write_text(json.dumps(obj))
    runner = CliRunner()

    def run_all(out):
        out.mkdir()
        (out / "audit.json").write_text(json.dumps({"result": "ce_result.json", "data": "bundled:toy",
                                                    "p": [0.0, 0.05, 0.1]}))
        c = tmp_path
        commands = [
            ["eval-fi", DATA / "classifier_a.csv", DATA / "classifier_b.csv", "--out", out / "fi.json"],
            ["train", "--config", c / "train.json", "--out", out / "kl_result.json", "--seed", 3],
            ["train", "--config", c / "ce.json", "--out", out / "ce_result.json"],
            ["attack-audit", "--config", out / "audit.json", "--out", out / "audit.csv"],
            ["synth-bench", "--config", c / "bench.json", "--out", out / "bench", "--seed", 5],
            ["nn-demo", "--config", c / "nn.json", "--out", out / "nn", "--seed", 1],
            ["cv", "--config", c / "cv.json", "--out", out / "cv_out.json", "--seed", 2],
        ]
        for args in commands:
            r = runner.invoke(main, [str(a) for a in args], catch_exceptions=False)
            assert r.exit_code == 0, (args[0], r.output)
        return _snapshot(out)

    with criterion(11, None):
        first, second = run_all(tmp_path / "a"), run_all(tmp_path / "b")
        assert len(first) >= 12
        assert first.keys() == second.keys()
        for name in first:
            assert first[name] == second[name], name
