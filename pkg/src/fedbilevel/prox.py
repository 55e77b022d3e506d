"""Sparsity regularizers, their proximal operators, and Moreau envelopes.

These are the outer objectives of the experiments: the smoothed l1 norm
(Huber form) and the log-sum penalty (LSP), a nonconvex sparsity
regularizer sitting between l0 and l1.
"""

from __future__ import annotations

import numpy as np

from ._validation import as_model_vector, check_positive


def soft_threshold(x, mu: float) -> np.ndarray:
    """Componentwise sign(x) * max(0, |x| - mu): the prox of mu*||.||_1."""
    x = as_model_vector(x)
    check_positive(mu, "mu")
    return np.sign(x) * np.maximum(0.0, np.abs(x) - mu)


def moreau_l1(x, mu: float) -> tuple[float, np.ndarray]:
    """Moreau envelope of the l1 norm and its gradient.

    The envelope is the sum of Huber terms H_mu(t) = t^2/(2 mu) for
    |t| <= mu and |t| - mu/2 otherwise; the gradient is
    (x - soft_threshold(x, mu)) / mu.
    """
    x = as_model_vector(x)
    check_positive(mu, "mu")
    a = np.abs(x)
    value = float(np.sum(np.where(a <= mu, a * a / (2.0 * mu), a - mu / 2.0)))
    gradient = (x - soft_threshold(x, mu)) / mu
    return value, gradient


def lsp_value(x, eps: float) -> float:
    """Log-sum penalty: sum_i log(1 + |x_i| / eps)."""
    x = as_model_vector(x)
    check_positive(eps, "eps")
    return float(np.sum(np.log1p(np.abs(x) / eps)))


def _check_lsp_regime(mu: float, eps: float) -> None:
    check_positive(mu, "mu")
    check_positive(eps, "eps")
    if np.sqrt(mu) > eps:
        raise ValueError(
            f"LSP prox requires sqrt(mu) <= eps, got sqrt({mu}) > {eps}"
        )


def prox_lsp(x, mu: float, eps: float) -> np.ndarray:
    """Proximal operator of mu * LSP, valid only for sqrt(mu) <= eps.

    Componentwise: 0 when |x_i| <= mu/eps, otherwise
    sign(x_i) * (|x_i| - eps + sqrt((|x_i| + eps)^2 - 4 mu)) / 2.
    """
    x = as_model_vector(x)
    _check_lsp_regime(mu, eps)
    a = np.abs(x)
    disc = (a + eps) ** 2 - 4.0 * mu
    branch = (a - eps + np.sqrt(np.maximum(disc, 0.0))) / 2.0
    return np.where(a <= mu / eps, 0.0, np.sign(x) * branch)


def moreau_lsp(x, mu: float, eps: float) -> tuple[float, np.ndarray]:
    """Moreau envelope of the LSP penalty and its gradient.

    value = LSP(prox(x)) + ||x - prox(x)||^2 / (2 mu),
    gradient = (x - prox(x)) / mu.
    """
    x = as_model_vector(x)
    p = prox_lsp(x, mu, eps)
    diff = x - p
    value = lsp_value(p, eps) + float(diff @ diff) / (2.0 * mu)
    return value, diff / mu
