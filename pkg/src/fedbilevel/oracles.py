"""Ground-truth solvers and evaluation metrics.

Exact projections onto affine inner solution sets, reference bilevel
solutions for the synthetic generators, and per-iterate gap/distance
measurements.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np

from ._validation import as_model_vector
from .problems import ProblemInstance

_RANK_RCOND = 1e-12


def _pinv(A: np.ndarray) -> np.ndarray:
    return np.linalg.pinv(A, rcond=_RANK_RCOND)


def affine_projection(A, b, y) -> np.ndarray:
    """Euclidean projection of y onto {x : A x = b}, via the pseudoinverse."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    y = as_model_vector(y, A.shape[1])
    pinv = _pinv(A)
    residual = np.linalg.norm(A @ (pinv @ b) - b)
    if residual > 1e-10 * max(1.0, np.linalg.norm(b)):
        raise ValueError(f"b is not in range(A): residual {residual:.3e}")
    return y - pinv @ (A @ y - b)


def min_l1_reference(A, b, max_dim: int = 12) -> tuple[np.ndarray, float]:
    """Exact min ||x||_1 s.t. Ax = b at toy scale, by support enumeration.

    Some optimal vertex has support of size at most rank(A), so scanning
    all column subsets up to that size is exhaustive. Restricted to
    n <= max_dim to keep the enumeration cheap.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    m, n = A.shape
    if n > max_dim:
        raise ValueError(f"l1 reference supports n <= {max_dim}, got n={n}")
    rank = np.linalg.matrix_rank(A, tol=None)
    best_x, best_val = None, np.inf
    bnorm = max(1.0, np.linalg.norm(b))
    for size in range(0, rank + 1):
        for support in combinations(range(n), size):
            sub = A[:, support] if support else np.zeros((m, 0))
            xs, *_ = np.linalg.lstsq(sub, b, rcond=None)
            resid = np.linalg.norm(sub @ xs - b) if size else np.linalg.norm(b)
            if resid > 1e-9 * bnorm:
                continue
            val = float(np.sum(np.abs(xs)))
            if val < best_val - 1e-12:
                best_val = val
                best_x = np.zeros(n)
                best_x[list(support)] = xs
    if best_x is None:
        raise ValueError("system Ax = b is infeasible")
    return best_x, best_val


def bilevel_reference(instance: ProblemInstance, outer_kind: str):
    """Reference bilevel solution (x*, f*, h*, ||grad f(x*)||).

    Requires an affine ground-truth handle. Supported outer kinds:
    'min-norm' (x* = pinv(A) b), 'shifted-norm' (projection of the
    configured center), and 'l1' at toy scale via exact enumeration.
    """
    gt = instance.ground_truth
    if gt is None:
        raise ValueError("instance has no affine ground-truth handle")
    A, b = gt.A, gt.b
    if outer_kind == "min-norm":
        x_star = _pinv(A) @ b
        f_star = 0.5 * float(x_star @ x_star)
        grad_norm = float(np.linalg.norm(x_star))
    elif outer_kind == "shifted-norm":
        center = instance.meta.get("center")
        if center is None:
            raise ValueError("shifted-norm reference needs a 'center' in instance.meta")
        center = as_model_vector(center, instance.n)
        x_star = affine_projection(A, b, center)
        f_star = 0.5 * float((x_star - center) @ (x_star - center))
        grad_norm = float(np.linalg.norm(x_star - center))
    elif outer_kind == "l1":
        x_star, f_star = min_l1_reference(A, b)
        grad_norm = float(np.sqrt(np.count_nonzero(x_star)))  # subgradient norm off zeros
    else:
        raise ValueError(
            f"unsupported outer kind {outer_kind!r}; "
            "supported: min-norm, shifted-norm, l1 (n <= 12)"
        )
    return x_star, f_star, gt.h_star, grad_norm


def metrics(instance: ProblemInstance, x) -> dict:
    """Global f and h at x, plus gaps and distance when references exist."""
    x = as_model_vector(x, instance.n)
    out = {
        "f": instance.f_value(x),
        "h": instance.h_value(x),
        "f_gap": None,
        "h_gap": None,
        "dist": None,
    }
    gt = instance.ground_truth
    if gt is not None:
        out["h_gap"] = out["h"] - gt.h_star
        if gt.f_star is not None:
            out["f_gap"] = out["f"] - gt.f_star
        proj = affine_projection(gt.A, gt.b, x)
        out["dist"] = float(np.linalg.norm(x - proj))
    return out
