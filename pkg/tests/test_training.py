import math
import warnings

import numpy as np
import pytest

from fragility.core import (Dataset, FeatureMap, LossKind, NormKind, Regularizer, accuracy,
                            max_pairwise_dual_norm)
from fragility.training import (InnerProblem, SolverParams, TargetTooTight, TrainResult, TrainSpec,
                                kl_constraint_value, kl_lower_bound, project_frobenius, set_target,
                                shrink_to_bound, train, train_erm, train_fi_dro, train_kl,
                                train_wass_ce, train_wass_hinge, train_wass_lipschitz)

import oracles
from conftest import clusters, random_instance

HINGE = LossKind("hinge")
CE = LossKind("cross_entropy")
L2 = Regularizer("l2", 0.01)


# ---------------------------------------------------------------- targets and ERM

def test_set_target_examples():
    spec = TrainSpec(target_ratio=1.2)
    assert set_target(None, spec, 0.5) == pytest.approx(0.6)
    assert set_target(None, TrainSpec(target=0.3), 123.0) == 0.3
    assert set_target(None, TrainSpec(target_ratio=1.1), 0.41) == pytest.approx(0.451)
    with pytest.warns(UserWarning):
        set_target(None, TrainSpec(target_ratio=0.9), 1.0)


def test_train_spec_roundtrip_and_validation():
    spec = TrainSpec(loss=CE, ambiguity="wasserstein", target=0.3, gamma=2.0, norm="one", reg=L2,
                     feature_map=FeatureMap("polynomial", 2))
    assert spec.target_ratio is None
    assert TrainSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        TrainSpec.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        TrainSpec(gamma=-1.0)
    with pytest.raises(ValueError):
        SolverParams(outer_tol=0.0)


def test_erm_separable(separable):
    erm = train_erm(separable, HINGE)
    assert accuracy(erm.model, separable) == 1.0


def test_erm_zero_features():
    d = Dataset(np.zeros((6, 2)), [0, 1, 0, 1, 0, 1], 2)
    erm = train_erm(d, HINGE)
    assert np.allclose(erm.weights, 0.0, atol=1e-9)
    assert erm.objective == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("loss", [CE, LossKind("smoothed_hinge")], ids=["ce", "smoothed"])
def test_erm_gradient_descent_is_monotone(binary_small, loss):
    erm = train_erm(binary_small, loss, L2)
    assert erm.method == "gradient_descent" and erm.converged
    assert all(b <= a for a, b in zip(erm.history, erm.history[1:]))


def test_erm_matches_cvxpy(binary_small):
    fm = FeatureMap("polynomial", 2)
    erm = train_erm(binary_small, HINGE, L2, feature_map=fm)
    want = oracles.erm_hinge_binary(fm(binary_small.features), binary_small.labels, 0.01)
    assert erm.objective == pytest.approx(want, abs=1e-6)


# ---------------------------------------------------------------- KL

def test_kl_constraint_value_examples():
    d = Dataset(np.zeros((3, 1)), [0, 1, 0], 2)
    B = np.zeros((1, 2))  # hinge losses all 1
    for k in (0.1, 1.0, 10.0):
        assert kl_constraint_value(d, B, k, HINGE, None, 0.25) == pytest.approx(0.75)
    d2 = Dataset(np.array([[1.0], [-1.0]]), [1, 1], 2)
    B2 = np.array([[0.0, 1.0]])  # margins 1 and -1: hinge 0 and 2
    assert kl_constraint_value(d2, B2, 1.0, HINGE, None, 0.0) == pytest.approx(math.log((1 + math.e ** 2) / 2), abs=1e-4)
    assert kl_constraint_value(d2, B2, 1e6, HINGE, None, 0.0) == pytest.approx(1.0, abs=1e-3)
    with pytest.raises(ValueError):
        kl_constraint_value(d2, B2, 0.0, HINGE, None, 0.0)


def test_kl_loose_target_inactive(binary_small):
    res = train_kl(binary_small, TrainSpec(loss=HINGE, target_ratio=10.0, reg=L2))
    assert not res.active
    assert res.k_star == pytest.approx(res.spec.solver.outer_tol)
    assert res.feasibility_slack <= 0


def test_kl_active_target(binary_small):
    res = train_kl(binary_small, TrainSpec(loss=HINGE, target_ratio=1.1, reg=L2))
    assert res.active and 0 < res.k_star < math.inf
    assert res.feasibility_slack <= res.spec.solver.outer_tol
    d = res.diagnostics
    assert d["k_hi"] - d["k_lo"] <= res.spec.solver.outer_tol
    # the bracket is sound: one step below k* is infeasible
    prob = InnerProblem(res.spec.feature_map(binary_small.features), binary_small.labels, 2, HINGE, L2,
                        mode="kl", tau=res.tau)
    assert prob.solve(d["k_lo"]).value > 0
    assert prob.solve(d["k_hi"]).value <= 0


def test_kl_target_too_tight(binary_small):
    with pytest.raises(TargetTooTight):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            train_kl(binary_small, TrainSpec(loss=HINGE, target_ratio=0.5, reg=L2))


def test_monotone_feasibility(binary_small):
    Phi = binary_small.features
    prob = InnerProblem(Phi, binary_small.labels, 2, HINGE, L2, mode="kl", tau=0.5)
    ks = [0.05, 0.1, 0.3, 1.0, 3.0, 10.0]
    vals = [prob.solve(k).value for k in ks]
    assert all(b <= a + 1e-9 for a, b in zip(vals, vals[1:]))


def test_lower_bound_certificate(binary_small):
    spec = TrainSpec(loss=HINGE, target_ratio=1.1, reg=Regularizer())
    res = train_kl(binary_small, spec)
    for eps2 in (0.05, 0.2, 1.0):
        eps1, ratio = kl_lower_bound(binary_small, spec, res.tau, eps2)
        if eps1 > 0:
            assert res.k_star >= ratio - spec.solver.outer_tol


def test_kl_deterministic(binary_small):
    spec = TrainSpec(loss=HINGE, target_ratio=1.1, reg=L2)
    a, b = train(binary_small, spec), train(binary_small, spec)
    assert a.k_star == b.k_star and np.array_equal(a.weights, b.weights)


def test_result_roundtrip(tmp_path, binary_small):
    res = train(binary_small, TrainSpec(loss=HINGE, target_ratio=1.2, reg=L2))
    path = tmp_path / "r.json"
    res.save(path)
    back = TrainResult.load(path)
    assert back.k_star == res.k_star and np.array_equal(back.weights, res.weights)
    assert back.spec == res.spec


# ---------------------------------------------------------------- Wasserstein

@pytest.mark.parametrize("norm", ["two", "one", "infinity"])
def test_wass_ce_pairwise_certificate(binary_small, norm):
    res = train_wass_ce(binary_small, TrainSpec(loss=CE, ambiguity="wasserstein", target_ratio=1.2,
                                                reg=L2, norm=norm))
    assert max_pairwise_dual_norm(res.weights, NormKind.parse(norm)) <= res.k_star + 1e-6
    assert res.feasibility_slack <= 1e-5
    assert not res.approximation_regime


def test_wass_ce_brute_force_equivalence():
    rng = np.random.default_rng(11)
    d = random_instance(rng, n_max=10, c_max=2, dim=3)
    spec = TrainSpec(loss=CE, ambiguity="wasserstein", target_ratio=1.2)
    res = train_wass_ce(d, spec)
    Phi = d.features
    gamma = res.diagnostics["gamma"]
    brute = oracles.wass_ce_worst_case(res.weights, Phi, d.labels, res.k_star, gamma, 0.0, res.tau, joint=True)
    reform = float(np.mean(oracles.ce_losses(res.weights, Phi, d.labels))) - res.tau
    assert brute == pytest.approx(reform, abs=1e-8)
    assert res.feasibility_slack == pytest.approx(reform, abs=1e-10)


def test_wass_ce_feature_scaling():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(8, 2))
    X = np.vstack([X, -X])  # symmetric instance
    y = np.array([0] * 8 + [1] * 8)
    y[[0, 9]] = y[[9, 0]]
    d1, d2 = Dataset(X, y, 2), Dataset(0.5 * X, y, 2)
    spec = TrainSpec(loss=CE, ambiguity="wasserstein", target=0.6)
    k1, k2 = train_wass_ce(d1, spec).k_star, train_wass_ce(d2, spec).k_star
    # halving the features doubles the weights needed, and their gaps
    assert k2 == pytest.approx(2 * k1, rel=1e-3)


def test_wass_hinge_certificate_and_flag(separable):
    spec = TrainSpec(loss=HINGE, ambiguity="wasserstein", target_ratio=1.5, reg=L2)
    res = train_wass_hinge(separable, spec)
    theta = HINGE.theta
    assert max_pairwise_dual_norm(res.weights, NormKind.TWO) <= res.k_star / theta + 1e-6
    assert not res.approximation_regime
    phimax = float(np.max(np.linalg.norm(separable.features, axis=1)))
    low = train_wass_hinge(separable, spec.with_(gamma=1.9 * phimax, target_ratio=None, target=0.5))
    assert low.approximation_regime


def test_hinge_and_smoothed_hinge_close():
    d = clusters(25, seed=0)
    ks = []
    for loss in (HINGE, LossKind("smoothed_hinge", 0.01)):
        spec = TrainSpec(loss=loss, ambiguity="wasserstein", target=0.4, reg=L2)
        ks.append(train_wass_hinge(d, spec).k_star)
    assert abs(ks[1] - ks[0]) <= 0.02 * ks[0]


def test_wrong_loss_rejected(binary_small):
    with pytest.raises(ValueError):
        train_wass_ce(binary_small, TrainSpec(loss=HINGE, ambiguity="wasserstein"))
    with pytest.raises(ValueError):
        train_wass_hinge(binary_small, TrainSpec(loss=CE, ambiguity="wasserstein"))
    with pytest.raises(ValueError):
        train_wass_lipschitz(binary_small, TrainSpec(loss=CE, ambiguity="wasserstein"))


# ---------------------------------------------------------------- Lipschitz

def test_projection_idempotent():
    rng = np.random.default_rng(0)
    B = rng.normal(size=(3, 4))
    once = project_frobenius(B, 0.7)
    assert np.array_equal(project_frobenius(once, 0.7), once)
    assert np.linalg.norm(once) <= 0.7
    s = shrink_to_bound(B, 0.5, NormKind.TWO)
    assert max_pairwise_dual_norm(s, NormKind.TWO) <= 0.5
    assert np.array_equal(shrink_to_bound(s, 0.5, NormKind.TWO), s)


def test_lipschitz_certificate(binary_small):
    spec = TrainSpec(loss=CE, ambiguity="wasserstein", target_ratio=1.2, lipschitz=(1.0, 1.0))
    res = train_wass_lipschitz(binary_small, spec)
    assert np.linalg.norm(res.weights) <= res.k_star / 1.0 + 1e-9
    assert res.feasibility_slack <= 1e-5


def test_lipschitz_huge_omega_forces_zero(binary_small):
    # the weight budget k / omega1 shrinks, so the loss at B = 0 must fit under tau
    spec = TrainSpec(loss=CE, ambiguity="wasserstein", target=math.log(2) + 0.05, lipschitz=(1e4, 1.0))
    res = train_wass_lipschitz(binary_small, spec)
    assert np.linalg.norm(res.weights) <= res.k_star / 1e4 + 1e-9
    assert np.allclose(res.weights, 0.0, atol=1e-2)


# ---------------------------------------------------------------- DRO variant

def test_dro_limits(binary_small):
    base = TrainSpec(loss=HINGE, ambiguity="wasserstein", target_ratio=1.1, reg=L2)
    plain = train_wass_hinge(binary_small, base)
    erm = train_erm(binary_small, HINGE, L2)
    big = train_fi_dro(binary_small, base.with_(ambiguity="wasserstein_dro", radius=1e3), erm=erm)
    assert big.k_star == pytest.approx(plain.k_star, abs=1e-4)
    mid = train_fi_dro(binary_small, base.with_(ambiguity="wasserstein_dro", radius=0.05), erm=erm)
    assert mid.k_star <= plain.k_star + 1e-5
    assert mid.lam >= 0 and big.lam >= 0
    # a zero radius only asks the target to hold on the sample itself
    zero = train_fi_dro(binary_small, base.with_(ambiguity="wasserstein_dro", radius=0.0), erm=erm)
    assert zero.k_star <= mid.k_star + 1e-5
