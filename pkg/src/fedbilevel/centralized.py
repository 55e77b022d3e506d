"""Centralized baselines: accelerated gradient methods and plain GD.

Also the instrument for measuring the regularized suboptimality
Err_eta = f_eta(x) - f_eta*.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import as_model_vector
from .regularize import RegularizedObjective


def project_domain(x: np.ndarray, domain) -> np.ndarray:
    """Closed-form projection onto a Euclidean ball or a box; identity if None."""
    if domain is None:
        return x
    kind = domain[0]
    if kind == "ball":
        radius = domain[1]
        nrm = np.linalg.norm(x)
        if nrm > radius:
            return x * (radius / nrm)
        return x
    if kind == "box":
        lo, hi = domain[1], domain[2]
        return np.clip(x, lo, hi)
    raise ValueError(f"unsupported domain {kind!r}")


@dataclass
class AGMResult:
    x: np.ndarray
    err_eta_bound: float | None
    iterations: int
    trajectory: list | None = None


def run_gd(
    obj: RegularizedObjective,
    x0,
    K: int,
    step: float | None = None,
    collect_iterates: bool = False,
) -> AGMResult:
    """Plain (projected) gradient descent with step 1/L by default."""
    x = as_model_vector(x0, obj.instance.n).copy()
    if step is None:
        step = 1.0 / obj.L
    domain = obj.instance.domain
    traj = [x.copy()] if collect_iterates else None
    for _ in range(K):
        x = project_domain(x - step * obj.full_grad(x), domain)
        if traj is not None:
            traj.append(x.copy())
    return AGMResult(x=x, err_eta_bound=None, iterations=K, trajectory=traj)


def run_agm_convex(
    obj: RegularizedObjective,
    x0,
    K: int,
    x_eta_star=None,
    collect_iterates: bool = False,
) -> AGMResult:
    """FISTA-style accelerated gradient with step 1/L, no restarts.

    When a reference minimizer of the regularized problem is supplied,
    the a-priori bound 2 L ||x0 - x_eta*||^2 / (K+1)^2 is evaluated.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    x0 = as_model_vector(x0, obj.instance.n)
    L = obj.L
    if not L > 0:
        raise ValueError("smoothness constant must be positive")
    domain = obj.instance.domain
    x = x0.copy()
    y = x0.copy()
    t = 1.0
    traj = [x.copy()] if collect_iterates else None
    for _ in range(K):
        x_new = project_domain(y - obj.full_grad(y) / L, domain)
        t_new = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t = x_new, t_new
        if traj is not None:
            traj.append(x.copy())
    bound = None
    if x_eta_star is not None:
        d0 = x0 - as_model_vector(x_eta_star, obj.instance.n)
        bound = 2.0 * L * float(d0 @ d0) / (K + 1) ** 2
    return AGMResult(x=x, err_eta_bound=bound, iterations=K, trajectory=traj)


def run_agm_strongly_convex(
    obj: RegularizedObjective,
    x0,
    K: int,
    x_eta_star=None,
    f_eta_star: float | None = None,
    collect_iterates: bool = False,
) -> AGMResult:
    """Accelerated gradient for the strongly convex regularized problem.

    Momentum (sqrt(k)-1)/(sqrt(k)+1) with condition number
    k = (eta L_f + L_h) / (eta mu_f). With reference solution and value,
    evaluates the geometric bound
    (1 - 1/sqrt(k))^K (f_eta(x0) - f_eta* + (eta mu_f / 2)||x0 - x_eta*||^2).
    """
    if obj.mu <= 0:
        raise ValueError("strongly convex scheme requires mu_f > 0 and eta > 0")
    if K < 1:
        raise ValueError("K must be >= 1")
    x0 = as_model_vector(x0, obj.instance.n)
    L = obj.L
    kappa = L / obj.mu
    beta = (math.sqrt(kappa) - 1.0) / (math.sqrt(kappa) + 1.0)
    domain = obj.instance.domain
    x = x0.copy()
    y = x0.copy()
    traj = [x.copy()] if collect_iterates else None
    for _ in range(K):
        x_new = project_domain(y - obj.full_grad(y) / L, domain)
        y = x_new + beta * (x_new - x)
        x = x_new
        if traj is not None:
            traj.append(x.copy())
    bound = None
    if x_eta_star is not None and f_eta_star is not None:
        x_eta_star = as_model_vector(x_eta_star, obj.instance.n)
        d0 = x0 - x_eta_star
        gap0 = obj.value(x0) - f_eta_star + 0.5 * obj.mu * float(d0 @ d0)
        bound = (1.0 - 1.0 / math.sqrt(kappa)) ** K * gap0
    return AGMResult(x=x, err_eta_bound=bound, iterations=K, trajectory=traj)


def solve_reg_problem(
    obj: RegularizedObjective,
    x0=None,
    tol: float = 1e-12,
    max_iter: int = 200_000,
) -> tuple[np.ndarray, float]:
    """Solve the regularized problem to high accuracy with AGM.

    Returns (minimizer, optimal value). Raises if the gradient norm and
    value stall criteria are not met within the iteration budget.
    """
    n = obj.instance.n
    x = np.zeros(n) if x0 is None else as_model_vector(x0, n).copy()
    block = 200
    prev_val = obj.value(x)
    for _ in range(max_iter // block):
        if obj.mu > 0:
            x = run_agm_strongly_convex(obj, x, block).x
        else:
            x = run_agm_convex(obj, x, block).x
        val = obj.value(x)
        gnorm = float(np.linalg.norm(obj.full_grad(x)))
        scale = 1.0 + abs(val)
        if obj.instance.domain is None and gnorm <= 1e-9 * scale and abs(prev_val - val) <= tol * scale:
            return x, val
        if obj.instance.domain is not None and abs(prev_val - val) <= tol * scale:
            return x, val
        prev_val = val
    raise RuntimeError("regularized problem did not converge to tolerance")


def measure_err_eta(
    obj: RegularizedObjective,
    x_candidate,
    f_eta_star: float | None = None,
) -> float:
    """Measured suboptimality f_eta(x) - f_eta*, floored at zero.

    The reference optimal value may be supplied (oracle problems) or is
    computed by running AGM to tolerance 1e-12.
    """
    x_candidate = as_model_vector(x_candidate, obj.instance.n)
    if f_eta_star is None:
        _, f_eta_star = solve_reg_problem(obj)
    return max(0.0, obj.value(x_candidate) - f_eta_star)
