"""Composed objective, schedule rules, weighted averaging, and error bounds."""

import math

import numpy as np
import pytest

from fedbilevel.problems import (
    LocalObjective,
    ProblemInstance,
    make_overparam_ls,
    squared_distance_objective,
)
from fedbilevel.regularize import (
    TheoremBoundInputs,
    WeightedAverage,
    bgd_regularized,
    compose,
    make_schedule,
    theorem1_bounds,
)


def simple_instance(mu_f=1.0, **extra):
    obj = squared_distance_objective(None, 3)
    inner = LocalObjective(
        kind="least-squares", features=np.eye(3), targets=np.array([1.0, 2.0, 3.0])
    )
    return ProblemInstance(clients=[(obj, inner)], n=3, mu_f=mu_f, **extra)


def test_compose_value_and_gradient_identity():
    inst = make_overparam_ls(8, 4, 2, seed=0)
    reg = compose(inst, eta=0.3)
    rng = np.random.default_rng(1)
    for _ in range(5):
        x = rng.standard_normal(8)
        assert reg.value(x) == pytest.approx(
            inst.h_value(x) + 0.3 * inst.f_value(x), rel=1e-12
        )
        expect = sum(
            inst.inner(c).grad(x) + 0.3 * inst.outer(c).grad(x) for c in range(2)
        ) / 2
        np.testing.assert_allclose(reg.full_grad(x), expect, rtol=1e-12)
    assert reg.L == pytest.approx(inst.L_h + 0.3 * inst.L_f)
    assert reg.mu == pytest.approx(0.3 * inst.mu_f)


def test_compose_eta_zero_reduces_to_inner():
    inst = make_overparam_ls(8, 4, 2, seed=0)
    reg = compose(inst, eta=0.0)
    x = np.random.default_rng(2).standard_normal(8)
    assert reg.value(x) == pytest.approx(inst.h_value(x), rel=1e-12)
    with pytest.raises(ValueError):
        compose(inst, eta=-0.1)


def test_bgd_regularized_formula():
    inst = simple_instance(
        L_f=1.0, L_h=1.0, G_f=1.0, G_h=1.0, B_f=1.0, B_h=1.0, f_gap=1.0, h_gap=1.0
    )
    bgd = bgd_regularized(inst, eta=0.5)
    assert bgd.Gsq == pytest.approx(2 + 4 + 2 + 4)
    assert bgd.Bsq == pytest.approx(max(4 * 0.5, 4.0))


def test_bgd_missing_metadata():
    inst = simple_instance()
    with pytest.raises(ValueError, match="BGD metadata missing"):
        bgd_regularized(inst, eta=0.5)


def test_schedule_sc_rule_values():
    inst = simple_instance(mu_f=1.0)
    sched = make_schedule("fedavg-sc", inst, R=1000, K=1, gamma_global=1.0)
    assert sched.gamma_tilde == pytest.approx(1000.0 ** (-2 / 3))
    assert sched.eta == pytest.approx(2.0 * math.log(1000) / 1000.0 ** (1 / 3))
    assert sched.gamma_local == pytest.approx(sched.gamma_tilde)
    assert sched.theta == pytest.approx(
        1.0 / (1.0 - sched.eta * sched.gamma_tilde / 2.0)
    )
    assert sched.theta > 1.0


def test_schedule_cvx_rule_values():
    inst = simple_instance(mu_f=0.0)
    sched = make_schedule("fedavg-cvx", inst, R=10_000, K=2, gamma_global=1.0)
    assert sched.gamma_tilde == pytest.approx(0.01)
    assert sched.eta == pytest.approx(0.1)
    assert sched.gamma_local == pytest.approx(0.005)
    assert sched.theta == 1.0


def test_schedule_eta_override_keeps_rule_stepsizes():
    inst = simple_instance(mu_f=1.0)
    base = make_schedule("fedavg-sc", inst, R=500)
    over = make_schedule("fedavg-sc", inst, R=500, eta=0.01)
    assert over.eta == 0.01
    assert over.gamma_tilde == base.gamma_tilde
    assert over.gamma_local == base.gamma_local


def test_schedule_gamma_defaults_and_manual():
    inst = make_overparam_ls(6, 3, 3, seed=0)
    sched = make_schedule("fedavg-sc", inst, R=100, K=4)
    assert sched.gamma_global == pytest.approx(math.sqrt(3))
    assert sched.gamma_local == pytest.approx(sched.gamma_tilde / (4 * math.sqrt(3)))
    man = make_schedule(
        "manual", inst, R=10, K=2, eta=0.1, gamma_local=0.05, gamma_global=2.0
    )
    assert man.gamma_tilde == pytest.approx(0.05 * 2 * 2.0)
    with pytest.raises(ValueError, match="manual rule requires"):
        make_schedule("manual", inst, R=10)


def test_schedule_validation_errors():
    inst_flat = simple_instance(mu_f=0.0)
    with pytest.raises(ValueError, match="requires mu_f > 0"):
        make_schedule("fedavg-sc", inst_flat, R=100)
    inst = simple_instance()
    with pytest.raises(ValueError, match="unknown schedule rule"):
        make_schedule("sgd", inst, R=100)
    with pytest.raises(ValueError, match="R must be"):
        make_schedule("fedavg-sc", inst, R=0)
    with pytest.raises(ValueError, match="S="):
        make_schedule("fedavg-sc", inst, R=100, S=5)
    with pytest.raises(ValueError, match="a="):
        make_schedule("fedavg-sc", inst, R=100, a=0.2, b=0.5)
    with pytest.raises(ValueError, match="p must be"):
        make_schedule("fedavg-sc", inst, R=100, p=0.5)
    with pytest.raises(ValueError, match="contraction"):
        make_schedule(
            "fedavg-sc", inst, R=10, eta=10.0, gamma_local=1.0, gamma_global=1.0
        )


def test_schedule_caps_and_clamp():
    inst = simple_instance(
        L_f=1.0, L_h=1.0, G_f=1.0, G_h=1.0, B_f=1.0, B_h=1.0, f_gap=1.0, h_gap=1.0
    )
    loose = make_schedule(
        "manual", inst, R=10, K=4, eta=0.1, gamma_local=0.5, gamma_global=1.0
    )
    assert loose.cap_exceeded and not loose.clamped
    clamped = make_schedule(
        "manual", inst, R=10, K=4, eta=0.1, gamma_local=0.5, gamma_global=1.0, clamp=True
    )
    assert clamped.clamped
    assert clamped.gamma_local == pytest.approx(min(clamped.caps.values()))
    assert clamped.gamma_tilde == pytest.approx(clamped.gamma_local * 4)
    # fedavg rules expose drift + contraction caps; scaffold adds sampling
    fa = make_schedule(
        "fedavg-sc", inst, R=10, K=1, eta=0.1, gamma_local=1e-4, gamma_global=1.0
    )
    assert set(fa.caps) == {"drift", "contraction"}
    scf = make_schedule("scaffold-sc", inst, R=100, S=1)
    assert "sampling" in scf.caps
    rt = clamped.to_dict()
    assert rt["clamped"] is True and rt["rule"] == "manual"


def test_weighted_average_uniform_theta():
    w = WeightedAverage(1.0)
    xs = [np.array([1.0]), np.array([2.0]), np.array([6.0])]
    for x in xs:
        w.update(x)
    assert w.value[0] == pytest.approx(3.0)
    assert w.count == 3


def test_weighted_average_geometric_theta():
    theta = 2.0
    w = WeightedAverage(theta)
    xs = [np.array([1.0]), np.array([2.0]), np.array([3.0])]
    for x in xs:
        w.update(x)
    # weights theta^1, theta^2, theta^3 on x_0, x_1, x_2
    expect = (2 * 1 + 4 * 2 + 8 * 3) / (2 + 4 + 8)
    assert w.value[0] == pytest.approx(expect, rel=1e-14)


def test_weighted_average_matches_direct_summation():
    theta = 1.007
    rng = np.random.default_rng(0)
    xs = [rng.standard_normal(4) for _ in range(200)]
    w = WeightedAverage(theta)
    for x in xs:
        w.update(x)
    weights = theta ** np.arange(1, 201)
    direct = np.sum(weights[:, None] * np.array(xs), axis=0) / weights.sum()
    np.testing.assert_allclose(w.value, direct, rtol=1e-12)


def test_weighted_average_errors():
    with pytest.raises(ValueError, match="theta"):
        WeightedAverage(0.9)
    with pytest.raises(ValueError, match="no iterates"):
        WeightedAverage(1.0).value


def test_theorem1_upper_bounds():
    rep = theorem1_bounds(TheoremBoundInputs(err_eta=0.02, M=1.0), eta=0.1)
    assert rep.h_gap_upper == pytest.approx(0.12)
    assert rep.f_gap_upper == pytest.approx(0.2)
    assert rep.f_gap_lower is None
    assert not rep.case_iii_applicable


def test_theorem1_lower_bound_and_case_iii():
    inputs = TheoremBoundInputs(
        err_eta=0.02, M=1.0, mu_f=1.0, grad_norm_at_star=2.0, alpha=1.0, kappa=1
    )
    # below the threshold alpha/(2||grad f||) = 0.25
    rep = theorem1_bounds(inputs, eta=0.1)
    assert rep.f_gap_lower == pytest.approx(-2.0 * 0.12)
    assert rep.case_iii_threshold == pytest.approx(0.25)
    assert rep.case_iii_applicable
    assert rep.h_gap_upper_iii == pytest.approx(0.04)
    assert rep.dist_sq_upper_iii == pytest.approx(2 * 0.02 / 0.1)
    # above the threshold: tightened bounds withheld
    rep2 = theorem1_bounds(inputs, eta=0.5)
    assert not rep2.case_iii_applicable
    assert rep2.h_gap_upper_iii is None
    # kappa = 2: lower bound uses the square root, case iii never fires
    inputs2 = TheoremBoundInputs(
        err_eta=0.04, M=1.0, grad_norm_at_star=1.0, alpha=1.0, kappa=2
    )
    rep3 = theorem1_bounds(inputs2, eta=0.1)
    assert rep3.f_gap_lower == pytest.approx(-math.sqrt(0.14))
    assert not rep3.case_iii_applicable


def test_theorem1_validation():
    with pytest.raises(ValueError, match="M must be"):
        TheoremBoundInputs(err_eta=0.1, M=0.0)
    with pytest.raises(ValueError):
        TheoremBoundInputs(err_eta=-0.1, M=1.0)
    with pytest.raises(ValueError, match="eta must be positive"):
        theorem1_bounds(TheoremBoundInputs(err_eta=0.1, M=1.0), eta=0.0)
