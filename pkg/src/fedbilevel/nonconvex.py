"""Two-loop scheme for a nonconvex outer objective.

Outer gradient steps on the smoothed composite
F(y) = f(y) + (1/lambda) ||y - proj(y)||^2, with the projection onto the
inner solution set evaluated inexactly by federated regularization: the
projection of y is itself a bilevel problem with the 1-strongly-convex,
1-smooth outer term g(x) = 0.5 ||x - y||^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import as_model_vector, check_positive
from .fedsim import run_training
from .oracles import affine_projection
from .problems import LocalObjective, ProblemInstance, squared_distance_objective
from .regularize import make_schedule


def _child_seed(seed: int, t: int) -> int:
    return int(np.random.SeedSequence((seed, t)).generate_state(1)[0])


@dataclass
class OuterConfig:
    """Hyperparameters of the outer gradient loop."""

    lam: float = 0.5  # Moreau smoothing parameter
    gamma: float | None = None  # outer stepsize; None means the cap
    T: int = 100
    p: float = 2.0
    a: float = 2.0 / 3.0
    b: float = 1.0 / 3.0
    K: int = 1
    S: int | None = None
    L_f_outer: float | None = None  # smoothness of f; inferred if None
    warm_start: bool = True

    def __post_init__(self):
        check_positive(self.lam, "lambda")
        if self.T < 1:
            raise ValueError("T must be >= 1")


def outer_stepsize_cap(L_f: float, lam: float) -> float:
    """Largest admissible outer step: 3 lam / (4 (L_f lam + 2))."""
    return 3.0 * lam / (4.0 * (L_f * lam + 2.0))


def _infer_outer_smoothness(f_outer: LocalObjective, fallback: float) -> float:
    if f_outer.kind in ("moreau-l1", "moreau-lsp"):
        return 1.0 / f_outer.mu
    if f_outer.kind == "zero":
        return 0.0
    return fallback


@dataclass
class InnerProjectionResult:
    """Inexact federated projection of y onto the inner solution set."""

    x_eta: np.ndarray
    h_gap: float | None
    rounds: int
    eta: float


def projection_instance(instance: ProblemInstance, y: np.ndarray) -> ProblemInstance:
    """Bilevel instance whose solution is the projection of y onto X*_h."""
    y = as_model_vector(y, instance.n)
    clients = [(squared_distance_objective(y, instance.n), inner) for _, inner in instance.clients]
    return ProblemInstance(
        clients=clients,
        n=instance.n,
        L_f=1.0,
        L_h=instance.L_h,
        mu_f=1.0,
        sigma_h=instance.sigma_h,
        ground_truth=instance.ground_truth,
        meta={"generator": "projection", "center": y},
    )


def inner_projection(
    instance: ProblemInstance,
    y,
    R_t: int,
    seed: int = 0,
    K: int = 1,
    S: int | None = None,
    p: float = 2.0,
    a: float = 2.0 / 3.0,
    b: float = 1.0 / 3.0,
    x0=None,
) -> InnerProjectionResult:
    """Approximate the projection of y via R_t rounds of R-FedAvg."""
    if R_t < 1:
        raise ValueError("R_t must be >= 1")
    proj = projection_instance(instance, y)
    schedule = make_schedule("fedavg-sc", proj, R=R_t, K=K, S=S, p=p, a=a, b=b)
    result = run_training(
        proj,
        schedule,
        method="fedavg",
        seed=seed,
        x0=y if x0 is None else x0,
        oracle_metrics=False,
        record_metrics=False,
    )
    x_eta = result.x_bar
    h_gap = None
    if instance.ground_truth is not None:
        h_gap = instance.h_value(x_eta) - instance.ground_truth.h_star
    return InnerProjectionResult(x_eta=x_eta, h_gap=h_gap, rounds=R_t, eta=schedule.eta)


def outer_step(y, grad_f, x_eta, lam: float, gamma: float) -> np.ndarray:
    """y - gamma * (grad f(y) + (1/lam)(y - x_eta))."""
    y = as_model_vector(y)
    return y - gamma * (np.asarray(grad_f, dtype=np.float64) + (y - x_eta) / lam)


@dataclass
class TwoLoopResult:
    trajectory: list
    t_star: int
    records: list = field(default_factory=list)
    total_inner_rounds: int = 0
    grad_map_sq_at_t_star: float = 0.0
    mean_grad_map_sq: float = 0.0
    gamma: float = 0.0
    clamped: bool = False


def run_two_loop(
    instance: ProblemInstance,
    f_outer: LocalObjective,
    config: OuterConfig,
    seed: int = 0,
    y0=None,
    projection: str = "fedavg",
) -> TwoLoopResult:
    """T outer steps with R_t = t inner rounds (floored at 1).

    At outer iteration t the projection of y^{t-1} is evaluated (inexactly
    by R-FedAvg, or exactly through the affine oracle when
    projection='oracle'), the smoothed-gradient estimate
    grad f + (1/lam)(y - x_eta) is recorded, and y is updated. T* is a
    post-hoc uniform draw over the T recorded iterates.
    """
    if projection not in ("fedavg", "oracle"):
        raise ValueError("projection must be 'fedavg' or 'oracle'")
    gt = instance.ground_truth
    if projection == "oracle" and gt is None:
        raise ValueError("oracle projection needs an affine ground-truth handle")
    lam = config.lam
    L_f = (
        _infer_outer_smoothness(f_outer, instance.L_f)
        if config.L_f_outer is None
        else config.L_f_outer
    )
    cap = outer_stepsize_cap(L_f, lam)
    gamma = cap if config.gamma is None else float(config.gamma)
    clamped = gamma > cap
    if clamped:
        gamma = cap

    n = instance.n
    y = np.zeros(n) if y0 is None else as_model_vector(y0, n).copy()
    trajectory = [y.copy()]
    records = []
    total_rounds = 0
    x_warm = None
    pinv_b = None
    if gt is not None:
        pinv_b = (np.linalg.pinv(gt.A, rcond=1e-12), gt.b)

    for t in range(1, config.T + 1):
        R_t = max(t, 1)
        if projection == "oracle":
            x_eta = affine_projection(gt.A, gt.b, y)
            inner_h_gap = instance.h_value(x_eta) - gt.h_star
        else:
            res = inner_projection(
                instance,
                y,
                R_t,
                seed=_child_seed(seed, t),
                K=config.K,
                S=config.S,
                p=config.p,
                a=config.a,
                b=config.b,
                x0=x_warm if config.warm_start else None,
            )
            x_eta = res.x_eta
            inner_h_gap = res.h_gap
            total_rounds += R_t
            x_warm = x_eta
        grad_f = f_outer.grad(y)
        grad_map = grad_f + (y - x_eta) / lam
        grad_map_sq = float(grad_map @ grad_map)
        rec = {
            "t": t,
            "R_t": R_t,
            "grad_map_sq": grad_map_sq,
            "dist_x_eta": None,
            "F": None,
            "inner_h_gap": inner_h_gap,
        }
        if pinv_b is not None:
            pinv, b = pinv_b
            proj_x = x_eta - pinv @ (gt.A @ x_eta - b)
            rec["dist_x_eta"] = float(np.linalg.norm(x_eta - proj_x))
            proj_y = y - pinv @ (gt.A @ y - b)
            d = y - proj_y
            rec["F"] = f_outer.value(y) + float(d @ d) / lam
        records.append(rec)
        y = outer_step(y, grad_f, x_eta, lam, gamma)
        if not np.all(np.isfinite(y)) or np.linalg.norm(y) > 1e12:
            raise RuntimeError("outer iterate diverged")
        trajectory.append(y.copy())

    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x7E57A)))
    t_star = int(rng.integers(1, config.T + 1))
    grad_sqs = [r["grad_map_sq"] for r in records]
    return TwoLoopResult(
        trajectory=trajectory,
        t_star=t_star,
        records=records,
        total_inner_rounds=total_rounds,
        grad_map_sq_at_t_star=grad_sqs[t_star - 1],
        mean_grad_map_sq=float(np.mean(grad_sqs)),
        gamma=gamma,
        clamped=clamped,
    )
