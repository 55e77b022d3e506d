"""Federated round engine: regularized FedAvg and SCAFFOLD.

Each communication round samples S clients, runs K local gradient steps
on the regularized objective h_i + eta*f_i (with control-variate
correction for SCAFFOLD), and aggregates the deltas on the server.
Results are bit-reproducible and independent of the worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_model_vector
from .oracles import affine_projection
from .problems import ProblemInstance
from .regularize import RegularizedObjective, Schedule, WeightedAverage, compose

DIVERGENCE_NORM = 1e12

_PURPOSE_SAMPLING = 0
_PURPOSE_LOCAL = 1
_PURPOSE_VARIATE = 2


class DivergenceError(RuntimeError):
    """Iterate became non-finite or left the trust region."""


def rng_stream(run_seed: int, round_index: int, client_id: int, purpose: int) -> np.random.Generator:
    """Independent, reproducible stream per (seed, round, client, purpose)."""
    seq = np.random.SeedSequence((run_seed, round_index, client_id + 1, purpose))
    return np.random.default_rng(seq)


def sample_clients(n_clients: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform without-replacement subset, returned in ascending order."""
    if not 1 <= size <= n_clients:
        raise ValueError(f"need 1 <= S <= N, got S={size}, N={n_clients}")
    if size == n_clients:
        return np.arange(n_clients)
    return np.sort(rng.choice(n_clients, size=size, replace=False))


def _check_finite(vec: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(vec)):
        raise DivergenceError(f"NaN/Inf in {what}; run aborted")


def _local_grad(obj, client_id, y, rng, batch):
    if batch is None:
        return obj.client_grad(client_id, y)
    return obj.client_stoch_grad(client_id, y, rng, batch)


def local_update_fedavg(
    obj: RegularizedObjective,
    client_id: int,
    x: np.ndarray,
    schedule: Schedule,
    rng: np.random.Generator,
    batch: int | None = None,
) -> np.ndarray:
    """K local steps from x; returns the accumulated delta y - x.

    The delta is accumulated directly (y is reconstructed as x + d) so a
    zero stepsize yields an exactly zero delta.
    """
    d = np.zeros_like(x)
    for _ in range(schedule.K):
        g = _local_grad(obj, client_id, x + d, rng, batch)
        d = d - schedule.gamma_local * g
        _check_finite(d, f"client {client_id} local iterate")
    return d


def local_update_scaffold(
    obj: RegularizedObjective,
    client_id: int,
    x: np.ndarray,
    c: np.ndarray,
    c_i: np.ndarray,
    schedule: Schedule,
    rng: np.random.Generator,
    batch: int | None = None,
    option: str = "ii",
) -> tuple[np.ndarray, np.ndarray]:
    """K corrected local steps; returns (delta y, delta c_i).

    Correction -c_i + c is added to every local gradient. The new client
    variate is either a fresh gradient at the server model (option 'i')
    or the gradient-free update c_i - c + (x - y)/(K gamma_l) (option 'ii').
    """
    if option not in ("i", "ii"):
        raise ValueError("SCAFFOLD option must be 'i' or 'ii'")
    d = np.zeros_like(x)
    correction = c - c_i
    for _ in range(schedule.K):
        g = _local_grad(obj, client_id, x + d, rng, batch)
        d = d - schedule.gamma_local * (g + correction)
        _check_finite(d, f"client {client_id} local iterate")
    if option == "i":
        c_i_new = _local_grad(obj, client_id, x, rng, batch)
    else:
        c_i_new = c_i - c - d / (schedule.K * schedule.gamma_local)
    return d, c_i_new - c_i


@dataclass
class ServerState:
    x: np.ndarray
    c: np.ndarray
    round: int = 0


def aggregate(
    server: ServerState,
    deltas: dict,
    delta_cs: dict | None,
    schedule: Schedule,
    method: str,
) -> ServerState:
    """Average client deltas in ascending id order and step the server.

    Fixed-order summation keeps the result bit-identical regardless of
    the order in which local updates completed.
    """
    ids = sorted(deltas)
    if len(ids) != schedule.S:
        raise ValueError(f"expected {schedule.S} deltas, got {len(ids)}")
    acc = deltas[ids[0]].copy()
    for cid in ids[1:]:
        acc += deltas[cid]
    delta_x = acc / len(ids)
    server.x = server.x + schedule.gamma_global * delta_x
    if method == "scaffold":
        acc_c = delta_cs[ids[0]].copy()
        for cid in ids[1:]:
            acc_c += delta_cs[cid]
        server.c = server.c + (len(ids) / schedule.N) * (acc_c / len(ids))
    server.round += 1
    _check_finite(server.x, "server model")
    if np.linalg.norm(server.x) > DIVERGENCE_NORM:
        raise DivergenceError("server model norm exceeded divergence threshold")
    return server


@dataclass
class RunResult:
    x_bar: np.ndarray
    x_final: np.ndarray
    records: list = field(default_factory=list)
    server: ServerState | None = None
    client_variates: np.ndarray | None = None


def _round_metrics(instance, obj, x_bar, f_eta_star, proj_cache):
    rec = {
        "f_bar": instance.f_value(x_bar),
        "h_bar": instance.h_value(x_bar),
        "f_gap": None,
        "h_gap": None,
        "dist": None,
        "err_eta": None,
    }
    gt = instance.ground_truth
    if gt is not None:
        rec["h_gap"] = rec["h_bar"] - gt.h_star
        if gt.f_star is not None:
            rec["f_gap"] = rec["f_bar"] - gt.f_star
        if proj_cache is None:
            proj = affine_projection(gt.A, gt.b, x_bar)
        else:
            pinv, b = proj_cache
            proj = x_bar - pinv @ (gt.A @ x_bar - b)
        rec["dist"] = float(np.linalg.norm(x_bar - proj))
    if f_eta_star is not None:
        rec["err_eta"] = max(0.0, obj.value(x_bar) - f_eta_star)
    return rec


def run_training(
    instance: ProblemInstance,
    schedule: Schedule,
    method: str = "fedavg",
    seed: int = 0,
    hooks=None,
    x0=None,
    batch: int | None = None,
    scaffold_option: str = "ii",
    oracle_metrics: bool = True,
    record_metrics: bool = True,
    f_eta_star: float | None = None,
    workers: int = 1,
) -> RunResult:
    """Run R communication rounds of R-FedAvg or R-SCAFFOLD.

    The theta-weighted average incorporates the pre-round iterate before
    each update. One metrics record is emitted per round (via ``hooks``
    when given); err_eta is filled only when a reference optimal value of
    the regularized problem is supplied.
    """
    if method not in ("fedavg", "scaffold"):
        raise ValueError(f"unknown method {method!r}")
    n = instance.n
    obj = compose(instance, schedule.eta)
    x = np.zeros(n) if x0 is None else as_model_vector(x0, n).copy()
    server = ServerState(x=x, c=np.zeros(n))
    c_clients = np.zeros((instance.n_clients, n))
    wavg = WeightedAverage(schedule.theta)
    records = []

    gt = instance.ground_truth
    proj_cache = None
    if oracle_metrics and gt is not None:
        proj_cache = (np.linalg.pinv(gt.A, rcond=1e-12), gt.b)

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def one_client(round_index, cid):
        rng = rng_stream(seed, round_index, cid, _PURPOSE_LOCAL)
        if method == "fedavg":
            return cid, local_update_fedavg(obj, cid, server.x, schedule, rng, batch), None
        dy, dc = local_update_scaffold(
            obj, cid, server.x, server.c, c_clients[cid], schedule, rng, batch, scaffold_option
        )
        return cid, dy, dc

    try:
        for r in range(1, schedule.R + 1):
            wavg.update(server.x)
            sampler = rng_stream(seed, r, -1, _PURPOSE_SAMPLING)
            sampled = sample_clients(schedule.N, schedule.S, sampler)
            if pool is None:
                results = [one_client(r, cid) for cid in sampled]
            else:
                results = list(pool.map(lambda cid: one_client(r, cid), sampled))
            deltas = {cid: dy for cid, dy, _ in results}
            delta_cs = {cid: dc for cid, _, dc in results} if method == "scaffold" else None
            if method == "scaffold":
                for cid, _, dc in results:
                    c_clients[cid] = c_clients[cid] + dc
            x_prev_norm = float(np.linalg.norm(server.x))
            aggregate(server, deltas, delta_cs, schedule, method)
            if record_metrics:
                x_bar = wavg.value
                if oracle_metrics:
                    rec = {"round": r, **_round_metrics(instance, obj, x_bar, f_eta_star, proj_cache)}
                else:
                    rec = {
                        "round": r,
                        "f_bar": instance.f_value(x_bar),
                        "h_bar": instance.h_value(x_bar),
                        "f_gap": None, "h_gap": None, "dist": None, "err_eta": None,
                    }
                rec["x_norm"] = float(np.linalg.norm(server.x))
                rec["delta_norm"] = abs(rec["x_norm"] - x_prev_norm)
                rec["sampled"] = [int(c) for c in sampled]
                records.append(rec)
                if hooks:
                    for hook in hooks:
                        hook(rec)
    finally:
        if pool is not None:
            pool.shutdown()

    x_bar = wavg.value if schedule.R >= 1 else server.x
    return RunResult(
        x_bar=x_bar,
        x_final=server.x,
        records=records,
        server=server,
        client_variates=c_clients if method == "scaffold" else None,
    )
