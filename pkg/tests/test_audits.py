import math

import numpy as np
import pytest

from fragility.core import Dataset, LossKind, Regularizer, losses
from fragility.training import (TrainResult, TrainSpec, audit_rs_constraint, check_tail_certificate,
                                flip_attack_bound, kl_tail_certificate, train, worst_flip_increase)

import oracles
from conftest import clusters, random_instance

CE = LossKind("cross_entropy")
HINGE = LossKind("hinge")


def _fake_ce_result(k=0.5, C=2, M=2):
    spec = TrainSpec(loss=CE, ambiguity="wasserstein", target=1.0)
    return TrainResult(k, np.zeros((M, C)), 0.0, True, 1.0, spec)


def test_flip_bound_examples():
    X = np.array([[2.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 0.5]])
    d = Dataset(X, [0, 1, 0, 1], 2)
    res = _fake_ce_result(0.5)
    assert flip_attack_bound(res, 0.0, d) == 0.0
    assert flip_attack_bound(res, 1 / 4, d) == pytest.approx(1 / 4)
    grid = [flip_attack_bound(res, p, d) for p in (0.1, 0.2, 0.3)]
    assert np.allclose(np.diff(grid), grid[0])  # linear in p
    hinge = TrainResult(0.5, np.zeros((2, 2)), 0.0, True, 1.0, TrainSpec(loss=HINGE, target=1.0))
    with pytest.raises(ValueError):
        flip_attack_bound(hinge, 0.1, d)


def test_worst_flip_matches_oracle_and_bound():
    rng = np.random.default_rng(4)
    for _ in range(3):
        d = random_instance(rng, n_max=10)
        res = train(d, TrainSpec(loss=CE, ambiguity="wasserstein", target_ratio=1.2))
        got = worst_flip_increase(res, d, 1)
        assert got == pytest.approx(oracles.single_flip_increase(res.weights, d.features, d.labels), abs=1e-12)
        assert got <= flip_attack_bound(res, 1 / d.n_samples, d) + 1e-9


def test_two_flips_within_bound():
    rng = np.random.default_rng(8)
    d = random_instance(rng, n_max=8, c_max=2)
    res = train(d, TrainSpec(loss=CE, ambiguity="wasserstein", target_ratio=1.2))
    assert worst_flip_increase(res, d, 2) <= flip_attack_bound(res, 2 / d.n_samples, d) + 1e-9


@pytest.fixture(scope="module")
def kl_model():
    d = clusters(10, seed=3)
    return d, train(d, TrainSpec(loss=HINGE, target_ratio=1.1, reg=Regularizer("l2", 0.01)))


def test_audit_identity_reweighting(kl_model):
    d, res = kl_model
    rep = audit_rs_constraint(res, d, np.full(d.n_samples, 1 / d.n_samples))
    assert rep.divergence == pytest.approx(0.0, abs=1e-15)
    ell = losses(HINGE, res.weights, d.features, d.labels)
    assert rep.slack == pytest.approx(ell.mean() + res.spec.reg.value(res.weights) - res.tau)
    assert rep.slack <= 0


def test_audit_dirichlet_and_adversarial(kl_model):
    d, res = kl_model
    rng = np.random.default_rng(0)
    for q in rng.dirichlet(np.ones(d.n_samples), 50):
        assert audit_rs_constraint(res, d, q).slack <= 1e-5
    ell = losses(HINGE, res.weights, d.features, d.labels)
    for mass in (0.5, 0.9, 1.0):
        q = np.full(d.n_samples, (1 - mass) / (d.n_samples - 1))
        q[np.argmax(ell)] = mass
        assert audit_rs_constraint(res, d, q).slack <= 1e-5


def test_audit_input_errors(kl_model):
    d, res = kl_model
    with pytest.raises(ValueError):
        audit_rs_constraint(res, d, np.ones(d.n_samples))
    with pytest.raises(ValueError):
        audit_rs_constraint(res, d, np.full(d.n_samples, 1 / d.n_samples), distance="tv")


def test_audit_wasserstein_reweighting():
    rng = np.random.default_rng(1)
    d = random_instance(rng, n_max=8, c_max=2)
    res = train(d, TrainSpec(loss=CE, ambiguity="wasserstein", target_ratio=1.2))
    for q in rng.dirichlet(np.ones(d.n_samples), 10):
        assert audit_rs_constraint(res, d, q, distance="wasserstein").slack <= 1e-5


def test_tail_certificate_constants():
    def fake(n_pos, n_neg):
        X = np.zeros((n_pos + n_neg, 1))
        y = [1] * n_pos + [0] * n_neg
        res = TrainResult(0.7, np.zeros((1, 2)), 0.0, True, 0.2, TrainSpec(loss=HINGE, target=0.2))
        return kl_tail_certificate(res, Dataset(X, y, 2))

    assert fake(10, 10).a == 1.0
    assert fake(2, 2).a == pytest.approx(1.0)
    c = fake(1, 30)  # ln 31 / ln 30 > 1
    assert c.a == pytest.approx(math.log(31) / math.log(30))
    assert c.scale == pytest.approx(c.a * 0.7)


def test_tail_certificate_holds(kl_model):
    d, res = kl_model
    out = check_tail_certificate(res, d)
    assert out["ok"] and out["fi_ok"]


def test_tail_certificate_rejects_multiclass():
    d = clusters(5, classes=4)
    res = TrainResult(1.0, np.zeros((2, 4)), 0.0, True, 0.2, TrainSpec(loss=HINGE, target=0.2))
    with pytest.raises(ValueError):
        kl_tail_certificate(res, d)
