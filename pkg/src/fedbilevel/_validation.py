"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def as_model_vector(x, n: int | None = None) -> np.ndarray:
    """Coerce ``x`` to a finite float64 vector, optionally of length ``n``."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError("model vector contains NaN or Inf entries")
    if n is not None and arr.shape[0] != n:
        raise ValueError(f"model vector has length {arr.shape[0]}, expected {n}")
    return arr


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value


def check_nonnegative(value: float, name: str) -> float:
    value = float(value)
    if value < 0:
        raise ValueError(f"{name} must be nonnegative, got {value}")
    return value


def check_client_id(client_id: int, n_clients: int) -> int:
    client_id = int(client_id)
    if not 0 <= client_id < n_clients:
        raise IndexError(f"client id {client_id} out of range [0, {n_clients})")
    return client_id
