"""Local objectives, synthetic problem generators, and data partitioning.

A problem instance bundles N client objective pairs (outer_i, inner_i)
together with smoothness/variance metadata and, for synthetic generators,
a ground-truth handle describing the affine inner solution set.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import prox
from ._validation import as_model_vector, check_client_id, check_positive

OBJECTIVE_KINDS = (
    "least-squares",
    "logistic",
    "quadratic-ball",
    "zero",
    "moreau-l1",
    "moreau-lsp",
    "custom-composite",
)


@dataclass
class LocalObjective:
    """One client's loss: a data-backed or analytic objective.

    Data-backed kinds (least-squares, logistic) expose per-sample
    gradients; the full gradient is the mean of per-sample gradients and
    stochastic gradients are unbiased minibatch means.
    """

    kind: str
    features: np.ndarray | None = None  # rows are samples
    targets: np.ndarray | None = None
    reg_weight: float = 0.0  # l2 term of the logistic loss
    mu: float | None = None  # Moreau smoothing parameter
    eps: float | None = None  # LSP scale
    matrix: np.ndarray | None = None  # quadratic-ball A
    shift: np.ndarray | None = None  # quadratic-ball b
    value_fn: object = None  # custom-composite callables
    grad_fn: object = None

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.features is not None:
            self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
            self.targets = np.asarray(self.targets, dtype=np.float64).reshape(-1)
            if self.features.shape[0] != self.targets.shape[0]:
                raise ValueError("feature rows and targets disagree in length")

    @property
    def n_samples(self) -> int:
        return 0 if self.features is None else self.features.shape[0]

    def _check_dim(self, x: np.ndarray) -> None:
        if self.features is not None and self.features.shape[1] != x.shape[0]:
            raise ValueError(
                f"dimension mismatch: x has length {x.shape[0]}, "
                f"features have {self.features.shape[1]} columns"
            )

    def value(self, x) -> float:
        x = as_model_vector(x)
        self._check_dim(x)
        if self.kind == "least-squares":
            r = self.features @ x - self.targets
            return float(r @ r) / (2.0 * self.n_samples)
        if self.kind == "logistic":
            margins = -self.targets * (self.features @ x)
            loss = float(np.mean(np.logaddexp(0.0, margins)))
            return loss + 0.5 * self.reg_weight * float(x @ x)
        if self.kind == "quadratic-ball":
            return float(x @ (self.matrix @ x) - 2.0 * (self.shift @ x))
        if self.kind == "zero":
            return 0.0
        if self.kind == "moreau-l1":
            return prox.moreau_l1(x, self.mu)[0]
        if self.kind == "moreau-lsp":
            return prox.moreau_lsp(x, self.mu, self.eps)[0]
        return float(self.value_fn(x))

    def grad(self, x) -> np.ndarray:
        x = as_model_vector(x)
        self._check_dim(x)
        if self.kind == "least-squares":
            r = self.features @ x - self.targets
            return self.features.T @ r / self.n_samples
        if self.kind == "logistic":
            margins = -self.targets * (self.features @ x)
            sig = 1.0 / (1.0 + np.exp(-margins))
            g = -(self.features.T @ (self.targets * sig)) / self.n_samples
            return g + self.reg_weight * x
        if self.kind == "quadratic-ball":
            return 2.0 * (self.matrix @ x) - 2.0 * self.shift
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "moreau-l1":
            return prox.moreau_l1(x, self.mu)[1]
        if self.kind == "moreau-lsp":
            return prox.moreau_lsp(x, self.mu, self.eps)[1]
        return as_model_vector(self.grad_fn(x), x.shape[0])

    def sample_grad(self, x, indices: np.ndarray) -> np.ndarray:
        """Mean gradient over the given sample indices."""
        x = as_model_vector(x)
        self._check_dim(x)
        if self.features is None:
            # analytic objectives have no sampling noise
            return self.grad(x)
        U = self.features[indices]
        v = self.targets[indices]
        if self.kind == "least-squares":
            r = U @ x - v
            return U.T @ r / len(indices)
        if self.kind == "logistic":
            margins = -v * (U @ x)
            sig = 1.0 / (1.0 + np.exp(-margins))
            g = -(U.T @ (v * sig)) / len(indices)
            return g + self.reg_weight * x
        raise ValueError(f"kind {self.kind!r} does not support sampling")


@dataclass
class Sharpness:
    """Weak-sharpness metadata: h(x) - h* >= alpha * dist^kappa(x, X*_h)."""

    alpha: float | None
    kappa: int

    def __post_init__(self):
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("sharpness alpha must be positive")
        if self.kappa < 1:
            raise ValueError("sharpness order kappa must be >= 1")


@dataclass
class GroundTruth:
    """Affine description of the inner solution set plus reference values."""

    A: np.ndarray
    b: np.ndarray
    h_star: float = 0.0
    x_star: np.ndarray | None = None
    f_star: float | None = None


@dataclass
class ProblemInstance:
    """N client objective pairs plus the constants the theory consumes."""

    clients: list  # [(outer_i, inner_i)]
    n: int
    L_f: float = 1.0
    L_h: float = 1.0
    mu_f: float = 0.0
    sigma_f: float = 0.0
    sigma_h: float = 0.0
    G_f: float | None = None
    G_h: float | None = None
    B_f: float | None = None
    B_h: float | None = None
    f_gap: float | None = None  # f* - inf f
    h_gap: float | None = None  # h* - inf h
    sharpness: Sharpness | None = None
    ground_truth: GroundTruth | None = None
    domain: tuple | None = None  # ("ball", radius) or ("box", lo, hi)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.clients) < 1:
            raise ValueError("need at least one client")
        if self.mu_f < 0:
            raise ValueError("mu_f must be nonnegative")
        for name in ("B_f", "B_h"):
            val = getattr(self, name)
            if val is not None and val < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    def outer(self, client_id: int) -> LocalObjective:
        return self.clients[check_client_id(client_id, self.n_clients)][0]

    def inner(self, client_id: int) -> LocalObjective:
        return self.clients[check_client_id(client_id, self.n_clients)][1]

    def f_value(self, x) -> float:
        return sum(o.value(x) for o, _ in self.clients) / self.n_clients

    def h_value(self, x) -> float:
        return sum(i.value(x) for _, i in self.clients) / self.n_clients


def grad_inner(instance: ProblemInstance, client_id: int, x) -> np.ndarray:
    return instance.inner(client_id).grad(x)


def grad_outer(instance: ProblemInstance, client_id: int, x) -> np.ndarray:
    return instance.outer(client_id).grad(x)


def stoch_grad(
    instance: ProblemInstance,
    client_id: int,
    which: str,
    x,
    rng: np.random.Generator,
    batch: int,
    with_replacement: bool = True,
) -> np.ndarray:
    """Uniform minibatch gradient; unbiased for the full gradient.

    Sampling is with replacement by default; the without-replacement
    override with batch equal to the dataset size reproduces the full
    gradient exactly (deterministic test path).
    """
    if which not in ("inner", "outer"):
        raise ValueError("which must be 'inner' or 'outer'")
    obj = instance.inner(client_id) if which == "inner" else instance.outer(client_id)
    if obj.features is None:
        return obj.grad(x)
    m = obj.n_samples
    if m == 0:
        raise ValueError(f"client {client_id} has an empty {which} dataset")
    if batch > m and not with_replacement:
        raise ValueError("batch exceeds local sample count")
    if with_replacement:
        idx = rng.integers(0, m, size=batch)
    else:
        idx = rng.permutation(m)[:batch] if batch < m else np.arange(m)
    return obj.sample_grad(x, idx)


def squared_distance_objective(center, n: int) -> LocalObjective:
    """f(x) = 0.5 * ||x - center||^2 expressed as n least-squares samples.

    Sample j has the scaled basis row sqrt(n) * e_j, so the per-sample
    mean recovers the quadratic exactly and minibatch sampling yields an
    unbiased stochastic gradient.
    """
    center = np.zeros(n) if center is None else as_model_vector(center, n)
    root = np.sqrt(float(n))
    U = np.eye(n) * root
    v = center * root
    return LocalObjective(kind="least-squares", features=U, targets=v)


def _split_rows(m: int, n_clients: int) -> list[np.ndarray]:
    # round-robin so remainders spread evenly
    return [np.arange(i, m, n_clients) for i in range(n_clients)]


def make_overparam_ls(
    n: int,
    m: int,
    n_clients: int,
    seed: int,
    outer: str = "min-norm",
    outer_mu: float = 0.1,
    outer_eps: float = 0.5,
) -> ProblemInstance:
    """Over-parameterized least squares with a known affine solution set.

    Draws A in R^{m x n} with m < n and sets b = A zbar, so h* = 0 and
    X*_h = {x : A x = b}. Rows are split round-robin across clients. The
    outer objective is one of: 'min-norm' (0.5 ||x||^2, strongly convex),
    'moreau-l1', or 'moreau-lsp'.
    """
    if m >= n:
        raise ValueError(f"need m < n for an over-parameterized system, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n))
    zbar = rng.standard_normal(n)
    b = A @ zbar

    row_groups = _split_rows(m, n_clients)
    if any(len(g) == 0 for g in row_groups):
        raise ValueError("more clients than rows: a client would have no inner data")

    clients = []
    L_h = 0.0
    for rows in row_groups:
        Ai, bi = A[rows], b[rows]
        inner = LocalObjective(kind="least-squares", features=Ai, targets=bi)
        L_h = max(L_h, float(np.linalg.norm(Ai, 2) ** 2) / len(rows))
        if outer == "min-norm":
            out = squared_distance_objective(None, n)
        elif outer == "moreau-l1":
            out = LocalObjective(kind="moreau-l1", mu=outer_mu)
        elif outer == "moreau-lsp":
            out = LocalObjective(kind="moreau-lsp", mu=outer_mu, eps=outer_eps)
        else:
            raise ValueError(f"unknown outer objective {outer!r}")
        clients.append((out, inner))

    if outer == "min-norm":
        L_f, mu_f = 1.0, 1.0
        x_star = np.linalg.pinv(A) @ b
        f_star = 0.5 * float(x_star @ x_star)
    else:
        L_f, mu_f = 1.0 / outer_mu, 0.0
        x_star, f_star = None, None

    # sigma estimates: per-sample gradient spread at the solution-set anchor
    sigma_h = max(
        float(np.max(np.linalg.norm(A, axis=1)) * np.linalg.norm(b) / max(m, 1)), 1.0
    )
    return ProblemInstance(
        clients=clients,
        n=n,
        L_f=L_f,
        L_h=L_h,
        mu_f=mu_f,
        sigma_h=sigma_h,
        ground_truth=GroundTruth(A=A, b=b, h_star=0.0, x_star=x_star, f_star=f_star),
        meta={"generator": "overparam-ls", "outer": outer, "seed": seed},
    )


def make_heterogeneous_1d(n_clients: int, seed: int, spread: float = 2.0) -> ProblemInstance:
    """1-D quadratics with unequal curvatures and shifted minima.

    Client i holds h_i(x) = 0.5 u_i^2 (x - c_i)^2 with u_i and c_i drawn
    at random, so local minimizers disagree and multi-step local updates
    drift. The global inner minimizer is the u^2-weighted mean of the
    c_i; the outer objective is 0.5 x^2.
    """
    if n_clients < 2:
        raise ValueError("heterogeneity needs at least two clients")
    rng = np.random.default_rng(seed)
    u = rng.uniform(0.5, 2.0, size=n_clients)
    c = rng.uniform(-spread, spread, size=n_clients)
    clients = []
    for ui, ci in zip(u, c):
        inner = LocalObjective(kind="least-squares", features=[[ui]], targets=[ui * ci])
        clients.append((squared_distance_objective(None, 1), inner))
    w = u**2
    x_h = float(np.sum(w * c) / np.sum(w))
    h_star = float(np.sum(w * (x_h - c) ** 2) / (2 * n_clients))
    return ProblemInstance(
        clients=clients,
        n=1,
        L_f=1.0,
        L_h=float(np.max(w)),
        mu_f=1.0,
        ground_truth=GroundTruth(
            A=np.eye(1), b=np.array([x_h]), h_star=h_star,
            x_star=np.array([x_h]), f_star=0.5 * x_h**2,
        ),
        meta={"generator": "heterogeneous-1d", "seed": seed, "u": u, "c": c},
    )


def make_weak_sharp_instance(kind: str, seed: int, m: int = 2, n: int = 3) -> ProblemInstance:
    """Instances whose inner solution set is weak sharp.

    'l2-residual': h(x) = ||A x - b||_2 with b in range(A); alpha is the
    smallest nonzero singular value of A and kappa = 1, which is the
    exact-regularization regime. 'quadratic-ball': the constrained
    indefinite quadratic h(x) = x'Ax - 2b'x over the unit ball, which is
    weak sharp with order kappa = 2.
    """
    rng = np.random.default_rng(seed)
    if kind == "l2-residual":
        A = rng.standard_normal((m, n))
        zbar = rng.standard_normal(n)
        b = A @ zbar
        svals = np.linalg.svd(A, compute_uv=False)
        alpha = float(np.min(svals[svals > 1e-12 * svals.max()]))

        def h_val(x, A=A, b=b):
            return float(np.linalg.norm(A @ x - b))

        def h_grad(x, A=A, b=b):
            r = A @ x - b
            nrm = np.linalg.norm(r)
            if nrm == 0.0:
                return np.zeros_like(x)
            return A.T @ r / nrm

        inner = LocalObjective(kind="custom-composite", value_fn=h_val, grad_fn=h_grad)
        x0 = rng.standard_normal(n)
        out = squared_distance_objective(x0, n)
        x_star = x0 - np.linalg.pinv(A) @ (A @ x0 - b)
        f_star = 0.5 * float((x_star - x0) @ (x_star - x0))
        return ProblemInstance(
            clients=[(out, inner)],
            n=n,
            L_f=1.0,
            L_h=float(svals.max()),  # Lipschitz constant of the residual map
            mu_f=1.0,
            sharpness=Sharpness(alpha=alpha, kappa=1),
            ground_truth=GroundTruth(A=A, b=b, h_star=0.0, x_star=x_star, f_star=f_star),
            meta={"generator": "weak-sharp", "kind": kind, "seed": seed, "center": x0},
        )
    if kind == "quadratic-ball":
        Q = rng.standard_normal((n, n))
        A = (Q + Q.T) / 2.0
        # force an indefinite matrix so the smallest eigenvalue is negative
        w, V = np.linalg.eigh(A)
        w[0] = -abs(w[0]) - 0.5
        A = V @ np.diag(w) @ V.T
        b = rng.standard_normal(n)
        inner = LocalObjective(kind="quadratic-ball", matrix=A, shift=b)
        out = squared_distance_objective(None, n)
        return ProblemInstance(
            clients=[(out, inner)],
            n=n,
            L_f=1.0,
            L_h=2.0 * float(np.max(np.abs(w))),
            mu_f=1.0,
            sharpness=Sharpness(alpha=None, kappa=2),
            domain=("ball", 1.0),
            meta={"generator": "weak-sharp", "kind": kind, "seed": seed},
        )
    raise ValueError(f"unknown weak-sharp kind {kind!r}")


@dataclass
class Partition:
    """Per-sample client assignment drawn from a Dirichlet prior."""

    assignment: np.ndarray
    seed: int
    alpha: float
    counts: np.ndarray  # classes x clients

    def client_indices(self, client_id: int) -> np.ndarray:
        return np.nonzero(self.assignment == client_id)[0]


def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    raw = proportions * total
    counts = np.floor(raw).astype(int)
    short = total - counts.sum()
    order = np.argsort(-(raw - counts))
    counts[order[:short]] += 1
    return counts


def dirichlet_partition(labels, n_clients: int, alpha: float, seed: int) -> Partition:
    """Non-iid split: per class, client proportions ~ Dir(alpha * 1_N).

    Counts are rounded with the largest-remainder rule so per-class totals
    are conserved exactly; the assignment is deterministic per seed. A
    client may end up with zero samples, which is reported via counts.
    """
    labels = np.asarray(labels)
    if n_clients < 1:
        raise ValueError("need at least one client")
    check_positive(alpha, "alpha")
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    assignment = np.empty(labels.shape[0], dtype=np.int64)
    counts = np.zeros((len(classes), n_clients), dtype=np.int64)
    for ci, cls in enumerate(classes):
        idx = np.nonzero(labels == cls)[0]
        props = rng.dirichlet(np.full(n_clients, alpha))
        cnt = _largest_remainder(props, len(idx))
        counts[ci] = cnt
        idx = rng.permutation(idx)
        start = 0
        for client, c in enumerate(cnt):
            assignment[idx[start : start + c]] = client
            start += c
    return Partition(assignment=assignment, seed=seed, alpha=alpha, counts=counts)


def export_partition_csv(partition: Partition, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sampleIndex", "clientId"])
        for i, c in enumerate(partition.assignment):
            writer.writerow([i, int(c)])


def load_csv_dataset(path, header: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Parse a CSV of samples: feature columns then a target last column."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader):
            if header and lineno == 0:
                continue
            if not row:
                continue
            try:
                rows.append([float(cell) for cell in row])
            except ValueError as exc:
                raise ValueError(f"non-numeric cell at row {lineno}: {exc}") from exc
    if not rows:
        raise ValueError("no rows in dataset file")
    width = len(rows[0])
    for lineno, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(f"ragged row at index {lineno}: {len(row)} != {width}")
    data = np.array(rows, dtype=np.float64)
    return data[:, :-1], data[:, -1]


def save_csv_dataset(path, features, targets) -> None:
    """Emit with 17 significant digits so read-back is lossless."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row, t in zip(features, targets):
            writer.writerow([f"{cell:.17g}" for cell in row] + [f"{t:.17g}"])
