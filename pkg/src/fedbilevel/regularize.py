"""Single-timescale regularization machinery.

Builds the composed objective h + eta*f, synthesizes stepsize/eta
schedules from the convergence theory, propagates gradient-dissimilarity
constants to the regularized problem, maintains the geometrically
weighted iterate average, and evaluates the bilevel error bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_model_vector, check_nonnegative
from .problems import ProblemInstance

SCHEDULE_RULES = ("fedavg-sc", "fedavg-cvx", "scaffold-sc", "scaffold-cvx", "manual")


class RegularizedObjective:
    """h + eta * f with per-client gradient oracles.

    Smoothness L_eta = L_h + eta * L_f; strong convexity eta * mu_f.
    eta = 0 is allowed for diagnostics and reduces to the inner problem.
    """

    def __init__(self, instance: ProblemInstance, eta: float):
        check_nonnegative(eta, "eta")
        self.instance = instance
        self.eta = float(eta)

    @property
    def L(self) -> float:
        return self.instance.L_h + self.eta * self.instance.L_f

    @property
    def mu(self) -> float:
        return self.eta * self.instance.mu_f

    def client_grad(self, client_id: int, x) -> np.ndarray:
        inner = self.instance.inner(client_id).grad(x)
        if self.eta == 0.0:
            return inner
        return inner + self.eta * self.instance.outer(client_id).grad(x)

    def client_stoch_grad(self, client_id, x, rng, batch, with_replacement=True) -> np.ndarray:
        from .problems import stoch_grad

        g = stoch_grad(self.instance, client_id, "inner", x, rng, batch, with_replacement)
        if self.eta == 0.0:
            return g
        gf = stoch_grad(self.instance, client_id, "outer", x, rng, batch, with_replacement)
        return g + self.eta * gf

    def full_grad(self, x) -> np.ndarray:
        x = as_model_vector(x, self.instance.n)
        total = self.client_grad(0, x).copy()
        for cid in range(1, self.instance.n_clients):
            total += self.client_grad(cid, x)
        return total / self.instance.n_clients

    def value(self, x) -> float:
        return self.instance.h_value(x) + self.eta * self.instance.f_value(x)


def compose(instance: ProblemInstance, eta: float) -> RegularizedObjective:
    return RegularizedObjective(instance, eta)


@dataclass
class BGDRegularized:
    """Gradient-dissimilarity constants of the regularized functions."""

    Gsq: float
    Bsq: float


def bgd_regularized(instance: ProblemInstance, eta: float) -> BGDRegularized:
    """Propagate the BGD constants through the regularization.

    Gsq = 2 G_f^2 + 4 L_f B_f^2 (f* - inf f) + 2 G_h^2 + 4 L_h B_h^2 (h* - inf h)
    Bsq = max{4 eta L_f B_f^2, 4 L_h B_h^2}
    """
    required = ("G_f", "G_h", "B_f", "B_h", "f_gap", "h_gap")
    missing = [name for name in required if getattr(instance, name) is None]
    if missing:
        raise ValueError(f"BGD metadata missing: {', '.join(missing)}")
    Gsq = (
        2.0 * instance.G_f**2
        + 4.0 * instance.L_f * instance.B_f**2 * instance.f_gap
        + 2.0 * instance.G_h**2
        + 4.0 * instance.L_h * instance.B_h**2 * instance.h_gap
    )
    Bsq = max(4.0 * eta * instance.L_f * instance.B_f**2, 4.0 * instance.L_h * instance.B_h**2)
    return BGDRegularized(Gsq=Gsq, Bsq=Bsq)


@dataclass
class Schedule:
    """Resolved run hyperparameters plus the rule that produced them."""

    rule: str
    eta: float
    gamma_local: float
    gamma_global: float
    gamma_tilde: float
    theta: float
    K: int
    R: int
    S: int
    N: int
    a: float
    b: float
    p: float
    Gamma: float
    caps: dict = field(default_factory=dict)
    cap_exceeded: bool = False
    clamped: bool = False

    def to_dict(self) -> dict:
        return {
            "rule": self.rule,
            "eta": self.eta,
            "gamma_local": self.gamma_local,
            "gamma_global": self.gamma_global,
            "gamma_tilde": self.gamma_tilde,
            "theta": self.theta,
            "K": self.K,
            "R": self.R,
            "S": self.S,
            "N": self.N,
            "a": self.a,
            "b": self.b,
            "p": self.p,
            "Gamma": self.Gamma,
            "caps": self.caps,
            "cap_exceeded": self.cap_exceeded,
            "clamped": self.clamped,
        }


def _stepsize_caps(rule: str, instance, eta, K, S, N, gamma_g) -> dict:
    caps = {}
    L_eta = instance.L_h + eta * instance.L_f
    try:
        bgd = bgd_regularized(instance, eta)
    except ValueError:
        return caps
    Bsq = bgd.Bsq
    if rule.startswith("fedavg"):
        caps["drift"] = 1.0 / (27.0 * K * Bsq * L_eta)
        caps["contraction"] = 1.0 / (16.0 * K * gamma_g * L_eta**2 * (1.0 + Bsq))
    else:
        caps["contraction"] = 1.0 / (81.0 * K * gamma_g * L_eta)
        if instance.mu_f > 0:
            caps["sampling"] = S / (15.0 * K * gamma_g * N * instance.mu_f)
    return caps


def make_schedule(
    rule: str,
    instance: ProblemInstance,
    R: int,
    K: int = 1,
    S: int | None = None,
    p: float = 2.0,
    Gamma: float = 0.0,
    a: float | None = None,
    b: float | None = None,
    gamma_global: float | None = None,
    eta: float | None = None,
    gamma_local: float | None = None,
    clamp: bool = False,
) -> Schedule:
    """Resolve eta and stepsizes from the theory's schedule rules.

    Strongly convex rules: gamma_tilde = 1/(mu_f^a (R+Gamma)^a) and
    eta = p ln(R) / (mu_f^b (R+Gamma)^b) with defaults a=2/3, b=1/3.
    Convex rules: gamma_tilde = 1/(R+Gamma)^a, eta = 1/(R+Gamma)^b with
    defaults a=1/2, b=1/4. gamma_local = gamma_tilde / (K * gamma_global)
    with gamma_global defaulting to sqrt(N). Theoretical stepsize caps
    are computed when BGD metadata is available and, when ``clamp`` is
    requested, enforced by lowering gamma_local (flag recorded).
    """
    if rule not in SCHEDULE_RULES:
        raise ValueError(f"unknown schedule rule {rule!r}")
    if R < 1:
        raise ValueError("R must be >= 1")
    N = instance.n_clients
    S = N if S is None else int(S)
    if not 1 <= S <= N:
        raise ValueError(f"need 1 <= S <= N, got S={S}, N={N}")
    strongly_convex = rule.endswith("-sc")
    if strongly_convex and instance.mu_f <= 0:
        raise ValueError(f"rule {rule!r} requires mu_f > 0")

    if a is None:
        a = 2.0 / 3.0 if strongly_convex else 0.5
    if b is None:
        b = 1.0 / 3.0 if strongly_convex else 0.25
    if rule != "manual" and not (0.0 <= b < a <= 1.0):
        raise ValueError(f"need 0 <= b < a <= 1, got a={a}, b={b}")
    if p < 1:
        raise ValueError("p must be >= 1")

    gamma_global = math.sqrt(N) if gamma_global is None else float(gamma_global)
    R_eff = R + Gamma
    # ln(R) floored at R=2 so the regularization weight stays positive
    log_R = math.log(max(R, 2))

    if rule == "manual":
        if eta is None or gamma_local is None:
            raise ValueError("manual rule requires explicit eta and gamma_local")
        gamma_tilde = gamma_local * K * gamma_global
    else:
        mu = instance.mu_f
        if strongly_convex:
            gamma_tilde = 1.0 / (mu**a * R_eff**a)
            if eta is None:
                eta = p * log_R / (mu**b * R_eff**b)
        else:
            gamma_tilde = 1.0 / R_eff**a
            if eta is None:
                eta = 1.0 / R_eff**b
        if gamma_local is None:
            gamma_local = gamma_tilde / (K * gamma_global)
        else:
            gamma_tilde = gamma_local * K * gamma_global

    caps = _stepsize_caps(rule, instance, eta, K, S, N, gamma_global)
    cap_exceeded = bool(caps) and gamma_local > min(caps.values())
    clamped = False
    if clamp and cap_exceeded:
        gamma_local = min(caps.values())
        gamma_tilde = gamma_local * K * gamma_global
        clamped = True

    if strongly_convex:
        contraction = eta * instance.mu_f * gamma_tilde / 2.0
        if contraction >= 1.0:
            raise ValueError(
                "schedule contraction eta*mu_f*gamma_tilde/2 >= 1; reduce stepsizes"
            )
        theta = 1.0 / (1.0 - contraction)
    else:
        theta = 1.0

    return Schedule(
        rule=rule,
        eta=float(eta),
        gamma_local=float(gamma_local),
        gamma_global=gamma_global,
        gamma_tilde=float(gamma_tilde),
        theta=theta,
        K=int(K),
        R=int(R),
        S=S,
        N=N,
        a=float(a),
        b=float(b),
        p=float(p),
        Gamma=float(Gamma),
        caps=caps,
        cap_exceeded=cap_exceeded,
        clamped=clamped,
    )


class WeightedAverage:
    """Running average with geometric weights theta^r over iterates.

    After r updates the mean equals sum_j theta^j x_{j-1} / sum_j theta^j.
    The weight ratio theta^r / sum_{j<=r} theta^j is maintained by a
    stable recurrence so theta^r is never materialized.
    """

    def __init__(self, theta: float):
        if theta < 1.0:
            raise ValueError("theta must be >= 1")
        self.theta = float(theta)
        self.mean: np.ndarray | None = None
        self.count = 0
        self._rho = 0.0  # theta^r / T_r

    def update(self, x) -> None:
        x = as_model_vector(x)
        self.count += 1
        if self.mean is None:
            self.mean = x.copy()
            self._rho = 1.0
            return
        self._rho = self.theta * self._rho / (1.0 + self.theta * self._rho)
        self.mean = self.mean + self._rho * (x - self.mean)

    @property
    def value(self) -> np.ndarray:
        if self.mean is None:
            raise ValueError("no iterates incorporated yet")
        return self.mean


def wavg_update(state: WeightedAverage, x_prev) -> WeightedAverage:
    state.update(x_prev)
    return state


@dataclass
class TheoremBoundInputs:
    """Measured quantities feeding the bilevel error bounds."""

    err_eta: float
    M: float
    mu_f: float = 0.0
    grad_norm_at_star: float | None = None
    alpha: float | None = None
    kappa: int | None = None

    def __post_init__(self):
        check_nonnegative(self.err_eta, "err_eta")
        if not self.M > 0:
            raise ValueError("M must be positive")


@dataclass
class BoundReport:
    """Numeric error bounds with flags for which regimes applied."""

    eta: float
    err_eta: float
    h_gap_upper: float  # (i-1): Err + eta*M
    f_gap_upper: float  # (i-2): Err / eta
    f_gap_lower: float | None = None  # (ii-2) lower bound, needs sharpness
    case_iii_applicable: bool = False
    case_iii_threshold: float | None = None
    h_gap_upper_iii: float | None = None  # (iii-1): 2*Err
    dist_sq_upper_iii: float | None = None  # (iii-3): 2 Err / (eta mu_f)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def theorem1_bounds(inputs: TheoremBoundInputs, eta: float) -> BoundReport:
    """Evaluate the applicable bilevel error bounds for a measured Err.

    Always reports the h-gap upper bound Err + eta*M and the f-gap upper
    bound Err/eta. With sharpness (alpha, kappa) the f-gap lower bound
    -||grad f(x*)|| * ((Err + eta*M)/alpha)^(1/kappa) is added. When
    kappa = 1 and eta <= alpha / (2 ||grad f(x*)||), the tightened bounds
    h-gap <= 2 Err and (for mu_f > 0) ||x - x*||^2 <= 2 Err/(eta mu_f)
    apply; outside the threshold the case is marked inapplicable.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    err = inputs.err_eta
    report = BoundReport(
        eta=eta,
        err_eta=err,
        h_gap_upper=err + eta * inputs.M,
        f_gap_upper=err / eta,
    )
    has_sharpness = inputs.alpha is not None and inputs.kappa is not None
    if has_sharpness and inputs.grad_norm_at_star is not None:
        report.f_gap_lower = -inputs.grad_norm_at_star * (
            (err + eta * inputs.M) / inputs.alpha
        ) ** (1.0 / inputs.kappa)
    if has_sharpness and inputs.kappa == 1 and inputs.grad_norm_at_star is not None:
        if inputs.grad_norm_at_star == 0.0:
            threshold = math.inf
        else:
            threshold = inputs.alpha / (2.0 * inputs.grad_norm_at_star)
        report.case_iii_threshold = threshold
        if eta <= threshold:
            report.case_iii_applicable = True
            report.h_gap_upper_iii = 2.0 * err
            if inputs.mu_f > 0:
                report.dist_sq_upper_iii = 2.0 * err / (eta * inputs.mu_f)
    return report
