"""Objectives, stochastic gradients, generators, partitioning, and CSV I/O."""

import numpy as np
import pytest

from fedbilevel.problems import (
    LocalObjective,
    ProblemInstance,
    dirichlet_partition,
    export_partition_csv,
    load_csv_dataset,
    make_heterogeneous_1d,
    make_overparam_ls,
    make_weak_sharp_instance,
    save_csv_dataset,
    squared_distance_objective,
    stoch_grad,
)


def fd_grad(obj, x, h=1e-6):
    g = np.zeros_like(x)
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (obj.value(x + e) - obj.value(x - e)) / (2 * h)
    return g


@pytest.mark.parametrize(
    "obj",
    [
        LocalObjective(
            kind="least-squares",
            features=np.random.default_rng(0).standard_normal((6, 4)),
            targets=np.random.default_rng(1).standard_normal(6),
        ),
        LocalObjective(
            kind="logistic",
            features=np.random.default_rng(2).standard_normal((8, 4)),
            targets=np.sign(np.random.default_rng(3).standard_normal(8)),
            reg_weight=0.05,
        ),
        LocalObjective(
            kind="quadratic-ball",
            matrix=np.diag([1.0, -0.5, 2.0, 0.3]),
            shift=np.array([0.1, 0.2, -0.3, 0.4]),
        ),
        LocalObjective(kind="moreau-l1", mu=0.3),
        LocalObjective(kind="moreau-lsp", mu=0.1, eps=0.6),
    ],
    ids=["least-squares", "logistic", "quadratic-ball", "moreau-l1", "moreau-lsp"],
)
def test_grad_matches_finite_differences(obj):
    rng = np.random.default_rng(7)
    for _ in range(5):
        x = rng.standard_normal(4)
        np.testing.assert_allclose(obj.grad(x), fd_grad(obj, x), rtol=1e-5, atol=1e-7)


def test_zero_objective():
    obj = LocalObjective(kind="zero")
    x = np.array([1.0, -2.0])
    assert obj.value(x) == 0.0
    np.testing.assert_array_equal(obj.grad(x), np.zeros(2))


def test_unknown_kind_rejected():
    with pytest.raises(ValueError, match="unknown objective kind"):
        LocalObjective(kind="what")


def test_dimension_mismatch_rejected():
    obj = LocalObjective(kind="least-squares", features=np.eye(3), targets=np.zeros(3))
    with pytest.raises(ValueError, match="dimension mismatch"):
        obj.value(np.zeros(5))


def test_ragged_construction_rejected():
    with pytest.raises(ValueError, match="disagree in length"):
        LocalObjective(kind="least-squares", features=np.eye(3), targets=np.zeros(4))


def test_full_batch_without_replacement_equals_full_grad():
    inst = make_overparam_ls(10, 6, 2, seed=0)
    x = np.random.default_rng(5).standard_normal(10)
    rng = np.random.default_rng(11)
    for cid in range(2):
        m = inst.inner(cid).n_samples
        g = stoch_grad(inst, cid, "inner", x, rng, batch=m, with_replacement=False)
        np.testing.assert_array_equal(g, inst.inner(cid).grad(x))


def test_stoch_grad_is_unbiased():
    inst = make_overparam_ls(8, 6, 1, seed=1)
    x = np.random.default_rng(6).standard_normal(8)
    rng = np.random.default_rng(12)
    draws = np.mean(
        [stoch_grad(inst, 0, "inner", x, rng, batch=2) for _ in range(20000)], axis=0
    )
    full = inst.inner(0).grad(x)
    assert np.linalg.norm(draws - full) <= 0.05 * (1 + np.linalg.norm(full))


def test_stoch_grad_errors():
    inst = make_overparam_ls(8, 6, 1, seed=1)
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError, match="which"):
        stoch_grad(inst, 0, "sideways", np.zeros(8), rng, batch=1)
    with pytest.raises(ValueError, match="batch exceeds"):
        stoch_grad(inst, 0, "inner", np.zeros(8), rng, batch=99, with_replacement=False)


def test_squared_distance_objective_exact():
    center = np.array([1.0, -2.0, 0.5])
    obj = squared_distance_objective(center, 3)
    rng = np.random.default_rng(4)
    for _ in range(5):
        x = rng.standard_normal(3)
        assert obj.value(x) == pytest.approx(0.5 * np.sum((x - center) ** 2), rel=1e-12)
        np.testing.assert_allclose(obj.grad(x), x - center, rtol=1e-12, atol=1e-14)


def test_overparam_ls_ground_truth():
    inst = make_overparam_ls(12, 5, 3, seed=2)
    gt = inst.ground_truth
    # pseudoinverse solution is feasible and h vanishes on it
    x_dag = np.linalg.pinv(gt.A) @ gt.b
    assert inst.h_value(x_dag) <= 1e-20
    assert gt.h_star == 0.0
    np.testing.assert_allclose(gt.x_star, x_dag, rtol=1e-10)
    assert gt.f_star == pytest.approx(0.5 * x_dag @ x_dag)
    # global inner objective is the client mean
    x = np.random.default_rng(9).standard_normal(12)
    direct = float(np.sum((gt.A @ x - gt.b) ** 2))
    # h is mean of per-client LS losses; with round-robin rows of equal size
    # the total equals ||Ax-b||^2 / (2m) ... verified against residual form
    per_client = sum(
        np.sum((inst.inner(c).features @ x - inst.inner(c).targets) ** 2)
        for c in range(3)
    )
    assert per_client == pytest.approx(direct, rel=1e-12)


def test_overparam_ls_requires_overparameterization():
    with pytest.raises(ValueError, match="m < n"):
        make_overparam_ls(4, 4, 1, seed=0)
    with pytest.raises(ValueError, match="more clients than rows"):
        make_overparam_ls(10, 2, 3, seed=0)


def test_heterogeneous_1d_ground_truth():
    inst = make_heterogeneous_1d(4, seed=5)
    u, c = inst.meta["u"], inst.meta["c"]
    gt = inst.ground_truth
    # the stated minimizer beats nearby points
    x_h = gt.b[0]
    assert inst.h_value(np.array([x_h])) == pytest.approx(gt.h_star, rel=1e-12)
    for dx in (-1e-3, 1e-3):
        assert inst.h_value(np.array([x_h + dx])) > gt.h_star
    # weighted-mean formula
    assert x_h == pytest.approx(np.sum(u**2 * c) / np.sum(u**2))
    with pytest.raises(ValueError, match="at least two"):
        make_heterogeneous_1d(1, seed=0)


def test_weak_sharp_l2_residual():
    inst = make_weak_sharp_instance("l2-residual", seed=0)
    gt, sh = inst.ground_truth, inst.sharpness
    assert sh.kappa == 1
    # sharpness: h(x) - h* >= alpha * dist(x, X*_h) at random points
    rng = np.random.default_rng(3)
    pinv = np.linalg.pinv(gt.A)
    for _ in range(50):
        x = rng.standard_normal(inst.n) * 3
        proj = x - pinv @ (gt.A @ x - gt.b)
        dist = np.linalg.norm(x - proj)
        assert inst.h_value(x) >= sh.alpha * dist - 1e-10
    # x_star minimizes f over the solution set: compare against sampled feasible points
    f_best = inst.f_value(gt.x_star)
    null = np.eye(inst.n) - pinv @ gt.A
    for _ in range(50):
        z = gt.x_star + null @ rng.standard_normal(inst.n)
        assert inst.f_value(z) >= f_best - 1e-10


def test_weak_sharp_quadratic_ball():
    inst = make_weak_sharp_instance("quadratic-ball", seed=1)
    assert inst.sharpness.kappa == 2
    assert inst.domain == ("ball", 1.0)
    # matrix really is indefinite
    w = np.linalg.eigvalsh(inst.inner(0).matrix)
    assert w[0] < 0
    with pytest.raises(ValueError, match="unknown weak-sharp kind"):
        make_weak_sharp_instance("nope", seed=0)


def test_instance_validation():
    obj = LocalObjective(kind="zero")
    with pytest.raises(ValueError, match="at least one client"):
        ProblemInstance(clients=[], n=1)
    with pytest.raises(ValueError, match="mu_f"):
        ProblemInstance(clients=[(obj, obj)], n=1, mu_f=-1.0)
    with pytest.raises(ValueError, match="B_f"):
        ProblemInstance(clients=[(obj, obj)], n=1, B_f=0.5)
    inst = ProblemInstance(clients=[(obj, obj)], n=1)
    with pytest.raises(IndexError, match="out of range"):
        inst.outer(5)


def test_dirichlet_partition_conserves_and_is_deterministic():
    labels = np.repeat(np.arange(3), 40)
    p1 = dirichlet_partition(labels, 4, alpha=0.5, seed=7)
    p2 = dirichlet_partition(labels, 4, alpha=0.5, seed=7)
    np.testing.assert_array_equal(p1.assignment, p2.assignment)
    assert p1.counts.sum() == len(labels)
    for ci in range(3):
        assert p1.counts[ci].sum() == 40
    # client_indices partitions the sample index range
    all_idx = np.sort(np.concatenate([p1.client_indices(c) for c in range(4)]))
    np.testing.assert_array_equal(all_idx, np.arange(len(labels)))
    p3 = dirichlet_partition(labels, 4, alpha=0.5, seed=8)
    assert not np.array_equal(p1.assignment, p3.assignment)


def test_dirichlet_partition_validation():
    with pytest.raises(ValueError):
        dirichlet_partition([0, 1], 0, alpha=0.5, seed=0)
    with pytest.raises(ValueError):
        dirichlet_partition([0, 1], 2, alpha=0.0, seed=0)


def test_partition_csv_export(tmp_path):
    labels = np.repeat([0, 1], 10)
    p = dirichlet_partition(labels, 2, alpha=1.0, seed=0)
    path = tmp_path / "parts.csv"
    export_partition_csv(p, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "sampleIndex,clientId"
    assert len(lines) == 21


def test_csv_dataset_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    U = rng.standard_normal((7, 3))
    v = rng.standard_normal(7)
    path = tmp_path / "data.csv"
    save_csv_dataset(path, U, v)
    U2, v2 = load_csv_dataset(path)
    np.testing.assert_array_equal(U, U2)
    np.testing.assert_array_equal(v, v2)


def test_csv_dataset_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("1.0,2.0\n3.0,x\n")
    with pytest.raises(ValueError, match="non-numeric"):
        load_csv_dataset(bad)
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("1.0,2.0\n3.0\n")
    with pytest.raises(ValueError, match="ragged"):
        load_csv_dataset(ragged)
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(ValueError, match="no rows"):
        load_csv_dataset(empty)
