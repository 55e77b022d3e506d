"""Estimator-style wrappers around the functional solvers.

These follow the scikit-learn parameter convention (constructor stores
hyperparameters, get_params/set_params work, fitted attributes carry a
trailing underscore). fit consumes a ProblemInstance rather than an
(X, y) pair since the unit of data here is a federated problem.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .centralized import run_agm_convex, run_agm_strongly_convex, run_gd
from .fedsim import run_training
from .nonconvex import OuterConfig, run_two_loop
from .regularize import compose, make_schedule


class FederatedSolver(BaseEstimator):
    """R-FedAvg / R-SCAFFOLD on the regularized problem h + eta*f."""

    def __init__(
        self,
        method: str = "fedavg",
        rule: str = "fedavg-sc",
        R: int = 100,
        K: int = 1,
        S: int | None = None,
        p: float = 2.0,
        Gamma: float = 0.0,
        a: float | None = None,
        b: float | None = None,
        eta: float | None = None,
        gamma_local: float | None = None,
        gamma_global: float | None = None,
        clamp: bool = False,
        batch: int | None = None,
        scaffold_option: str = "ii",
        seed: int = 0,
        workers: int = 1,
    ):
        self.method = method
        self.rule = rule
        self.R = R
        self.K = K
        self.S = S
        self.p = p
        self.Gamma = Gamma
        self.a = a
        self.b = b
        self.eta = eta
        self.gamma_local = gamma_local
        self.gamma_global = gamma_global
        self.clamp = clamp
        self.batch = batch
        self.scaffold_option = scaffold_option
        self.seed = seed
        self.workers = workers

    def fit(self, instance, x0=None):
        self.schedule_ = make_schedule(
            self.rule,
            instance,
            R=self.R,
            K=self.K,
            S=self.S,
            p=self.p,
            Gamma=self.Gamma,
            a=self.a,
            b=self.b,
            eta=self.eta,
            gamma_local=self.gamma_local,
            gamma_global=self.gamma_global,
            clamp=self.clamp,
        )
        result = run_training(
            instance,
            self.schedule_,
            method=self.method,
            seed=self.seed,
            x0=x0,
            batch=self.batch,
            scaffold_option=self.scaffold_option,
            workers=self.workers,
        )
        self.result_ = result
        self.solution_ = result.x_bar
        self.records_ = result.records
        return self

    def predict(self, X):
        """Model-vector dot product with each row of X."""
        if not hasattr(self, "solution_"):
            raise ValueError("estimator is not fitted yet")
        return np.atleast_2d(np.asarray(X, dtype=np.float64)) @ self.solution_


class CentralizedSolver(BaseEstimator):
    """AGM (default) or plain GD on the regularized problem."""

    def __init__(self, algorithm: str = "agm", eta: float = 0.1, K: int = 100, step: float | None = None):
        self.algorithm = algorithm
        self.eta = eta
        self.K = K
        self.step = step

    def fit(self, instance, x0=None):
        obj = compose(instance, self.eta)
        x0 = np.zeros(instance.n) if x0 is None else x0
        if self.algorithm == "gd":
            res = run_gd(obj, x0, self.K, step=self.step)
        elif self.algorithm == "agm":
            if obj.mu > 0:
                res = run_agm_strongly_convex(obj, x0, self.K)
            else:
                res = run_agm_convex(obj, x0, self.K)
        else:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        self.result_ = res
        self.solution_ = res.x
        return self

    def predict(self, X):
        if not hasattr(self, "solution_"):
            raise ValueError("estimator is not fitted yet")
        return np.atleast_2d(np.asarray(X, dtype=np.float64)) @ self.solution_


class TwoLoopSolver(BaseEstimator):
    """Two-loop scheme for a nonconvex outer objective."""

    def __init__(
        self,
        lam: float = 0.5,
        gamma: float | None = None,
        T: int = 100,
        K: int = 1,
        S: int | None = None,
        p: float = 2.0,
        seed: int = 0,
    ):
        self.lam = lam
        self.gamma = gamma
        self.T = T
        self.K = K
        self.S = S
        self.p = p
        self.seed = seed

    def fit(self, instance, f_outer=None, y0=None):
        if f_outer is None:
            raise ValueError("fit requires the outer objective f_outer")
        config = OuterConfig(
            lam=self.lam, gamma=self.gamma, T=self.T, K=self.K, S=self.S, p=self.p
        )
        res = run_two_loop(instance, f_outer, config, seed=self.seed, y0=y0)
        self.result_ = res
        self.solution_ = res.trajectory[res.t_star]
        self.records_ = res.records
        return self
