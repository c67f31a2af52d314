"""Trainers: normal equations, SGD/Adam with shrinkage, their dual (SGDF) forms, LiSSA.

The stochastic trainers visit one data point per update, in a seeded random
order that is reshuffled every epoch. By default the regularizer is applied
once per epoch, after the last point ("end of batch"). Passing a
:class:`~regtangent.diffkit.DualParams` through the same update code gives
SGDF: the tangent part of the iterate tracks ``dtheta/ds``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Iterator, NamedTuple

import numpy as np
import scipy.linalg

from .diffkit import DualParams, objective_hvp
from .exceptions import DivergenceError, InvalidInputError, SingularSystemError
from .model import Problem, objective_grad

DIVERGENCE_LIMIT = 1e12
SINGULAR_RCOND = 1e-13


# ---------------------------------------------------------------------------
# closed form
# ---------------------------------------------------------------------------


def fit_normal_equations(problem: Problem, sample_weight=None) -> np.ndarray:
    """Exact minimizer of the (quadratic) objective.

    Solves ``(X^T W X + H_R/2) theta = X^T W y - grad_R(0)/2``, one Newton step
    from zero. For L2 this is ``(X^T X + s I)^{-1} X^T y``; for the shared-mean
    regularizer the right-hand side gains ``s * center``. ``sample_weight``
    scales each point's loss (0 drops the point).

    Raises
    ------
    SingularSystemError
        When the system matrix is singular to working precision.
    """
    X, y, p = problem.X, problem.y, problem.p
    w = np.ones(problem.n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    if w.shape != (problem.n,):
        raise InvalidInputError("sample_weight must have one entry per data point")
    reg, s = problem.regularizer, problem.s
    A = X.T @ (w[:, None] * X) + 0.5 * reg.hessian(s, p)
    A = 0.5 * (A + A.T)
    rhs = X.T @ (w * y) - 0.5 * np.asarray(reg.grad(s, np.zeros(p)), dtype=float)
    eig = np.linalg.eigvalsh(A)
    if eig[-1] <= 0 or eig[0] <= SINGULAR_RCOND * eig[-1]:
        raise SingularSystemError(
            f"normal equations are singular (eigenvalues {eig[0]:.3g} .. {eig[-1]:.3g})")
    return scipy.linalg.cho_solve(scipy.linalg.cho_factor(A), rhs)


# ---------------------------------------------------------------------------
# stochastic trainers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    """Settings for :func:`run_sgd`, :func:`run_sgdf` and :func:`run_adam`.

    ``schedule`` is ``"constant"`` or ``"inverse_time"``; the latter uses
    ``step_size / (1 + epoch / decay_epochs)``. ``reg_cadence`` is
    ``"batch_end"`` (the default) or ``"per_update"``, which adds the full
    regularizer gradient to every point update. Training stops early once
    the max-norm change over an epoch falls below ``tol``.
    """

    optimizer: str = "sgd"
    step_size: float = 1e-3
    epochs: int = 100
    seed: int = 0
    schedule: str = "constant"
    decay_epochs: float = 100.0
    track_tangent: bool = False
    reg_cadence: str = "batch_end"
    tol: float = 1e-10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidInputError(f"unknown optimizer {self.optimizer!r}")
        if not self.step_size > 0:
            raise InvalidInputError("step size must be positive")
        if self.epochs < 1:
            raise InvalidInputError("epochs must be at least 1")
        if self.schedule not in ("constant", "inverse_time"):
            raise InvalidInputError(f"unknown schedule {self.schedule!r}")
        if self.schedule == "inverse_time" and not self.decay_epochs > 0:
            raise InvalidInputError("decay_epochs must be positive")
        if self.reg_cadence not in ("batch_end", "per_update"):
            raise InvalidInputError(f"unknown regularizer cadence {self.reg_cadence!r}")

    def step_at(self, epoch: int) -> float:
        if self.schedule == "inverse_time":
            return self.step_size / (1.0 + epoch / self.decay_epochs)
        return self.step_size


def point_orders(n: int, seed: int) -> Iterator[np.ndarray]:
    """Endless stream of seeded permutations of ``range(n)``, one per epoch."""
    rng = np.random.default_rng(seed)
    while True:
        yield rng.permutation(n)


def _check_divergence(theta, what="parameters"):
    if isinstance(theta, DualParams):
        _check_divergence(theta.value, what)
        _check_divergence(theta.tangent, f"{what} (tangent)")
        return
    norm = float(np.linalg.norm(theta))
    if not math.isfinite(norm) or norm > DIVERGENCE_LIMIT:
        raise DivergenceError(f"{what} diverged (norm {norm:.3g})")


def _max_change(a, b) -> float:
    if isinstance(a, DualParams):
        return max(_max_change(a.value, b.value), _max_change(a.tangent, b.tangent))
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)))


class Stepper:
    """Single-point and end-of-batch updates shared by all stochastic trainers.

    ``theta`` is an ndarray or, for the dual trainers, a ``DualParams``; the
    same arithmetic runs in both cases, so the value stream of a dual run is
    identical to the plain run.
    """

    def __init__(self, problem: Problem, config: TrainConfig, theta):
        self.problem = problem
        self.config = config
        self.theta = theta
        self.dual = isinstance(theta, DualParams)
        self.s = problem.s
        self._k = 0
        if config.optimizer == "adam":
            p = problem.p
            self._m = DualParams(np.zeros(p)) if self.dual else np.zeros(p)
            self._v = np.zeros(p)
            self._step = None

    def _s(self):
        return DualParams(self.s, 1.0) if self.dual else self.s

    def point_grad(self, i: int):
        """Loss gradient at data point ``i``, plus the regularizer when per-update."""
        phi = self.problem.X[i]
        theta = self.theta
        g = 2 * phi * (phi @ theta - self.problem.y[i])
        if self.config.reg_cadence == "per_update":
            g = g + self.problem.regularizer.grad(self._s(), theta)
        return g

    def point_step(self, i: int, eta: float):
        g = self.point_grad(i)
        if self.config.optimizer == "sgd":
            self.theta = self.theta - eta * g
        else:
            self._adam(g, eta)
        return g

    def _adam(self, g, lr: float):
        c = self.config
        self._k += 1
        gv = g.value if self.dual else g
        self._m = c.beta1 * self._m + (1 - c.beta1) * g
        self._v = c.beta2 * self._v + (1 - c.beta2) * (gv * gv)
        vhat = self._v / (1 - c.beta2 ** self._k)
        # per-coordinate effective step; held fixed under differentiation
        self._step = lr / (np.sqrt(vhat) + c.eps)
        self.theta = self.theta - self._step * (self._m * (1.0 / (1 - c.beta1 ** self._k)))

    def batch_end(self, eta: float):
        if self.config.reg_cadence != "batch_end":
            return
        gR = self.problem.regularizer.grad(self._s(), self.theta)
        if self.config.optimizer == "sgd" or self._step is None:
            self.theta = self.theta - eta * gR
        else:
            self.theta = self.theta - self._step * gR


def _as_start(problem: Problem, theta0, dual: bool):
    p = problem.p
    if dual:
        if theta0 is None:
            return DualParams(np.zeros(p))
        if isinstance(theta0, DualParams):
            start = theta0.copy()
        else:
            start = DualParams(np.asarray(theta0, dtype=float))
        if start.shape != (p,):
            raise InvalidInputError(f"initial parameters must have shape ({p},)")
        return start
    if theta0 is None:
        return np.zeros(p)
    if isinstance(theta0, DualParams):
        theta0 = theta0.value
    start = np.array(theta0, dtype=float)
    if start.shape != (p,):
        raise InvalidInputError(f"initial parameters must have shape ({p},)")
    return start


def train(problem: Problem, config: TrainConfig, theta0=None,
          callback: Callable[[int, object], None] | None = None):
    """Run the trainer described by ``config``.

    Returns an ndarray, or a ``DualParams`` when ``config.track_tangent``.
    ``callback(t, theta)`` is called after every point update ``t``.
    """
    stepper = Stepper(problem, config, _as_start(problem, theta0, config.track_tangent))
    orders = point_orders(problem.n, config.seed)
    t = 0
    for epoch in range(config.epochs):
        eta = config.step_at(epoch)
        before = stepper.theta
        for i in next(orders):
            stepper.point_step(i, eta)
            t += 1
            if callback is not None:
                callback(t, stepper.theta)
        stepper.batch_end(eta)
        _check_divergence(stepper.theta)
        if _max_change(stepper.theta, before) < config.tol:
            break
    return stepper.theta


def run_sgd(problem: Problem, config: TrainConfig, theta0=None, callback=None) -> np.ndarray:
    """Plain SGD with end-of-batch shrinkage (or per-update regularization)."""
    cfg = config if (config.optimizer == "sgd" and not config.track_tangent) else \
        _replace(config, optimizer="sgd", track_tangent=False)
    return train(problem, cfg, theta0, callback)


def run_sgdf(problem: Problem, config: TrainConfig, dual0=None, callback=None) -> DualParams:
    """SGD on dual parameters: returns ``theta`` with its regularity tangent.

    Per point the tangent moves by ``-eta * H_z theta_dot``; at the end of each
    batch by ``-eta * (rho + H_R theta_dot)``, which for L2 is
    ``(1 - 2 eta s) theta_dot - 2 eta theta``.
    """
    cfg = config if config.track_tangent else _replace(config, track_tangent=True)
    return train(problem, cfg, dual0, callback)


def run_adam(problem: Problem, config: TrainConfig, theta0=None, callback=None):
    """Adam; with ``track_tangent`` the tangent reuses Adam's per-coordinate step.

    The tangent carries its own first moment (the momentum of the gradient
    tangents); the second-moment denominator is treated as a fixed step size.
    """
    cfg = config if config.optimizer == "adam" else _replace(config, optimizer="adam")
    return train(problem, cfg, theta0, callback)


def _replace(config: TrainConfig, **changes) -> TrainConfig:
    return replace(config, **changes)


# ---------------------------------------------------------------------------
# LiSSA
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LissaConfig:
    """Settings for :func:`run_lissa`.

    ``variant="scaled"`` iterates ``h <- h + eta (v - A_t h)``; ``"classic"``
    is the unit-step form ``h <- v + (I - A_t) h``. With ``sampling="point"``
    ``A_t`` is the loss Hessian at one data point (plus the regularizer
    Hessian), visited in the same seeded order as the trainers; with
    ``"full"`` it is the whole objective Hessian.
    """

    v: np.ndarray
    step_size: float = 1e-3
    iterations: int = 1000
    seed: int = 0
    variant: str = "scaled"
    sampling: str = "point"
    tol: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "v", np.array(self.v, dtype=float))
        if self.iterations < 1:
            raise InvalidInputError("iterations must be at least 1")
        if self.variant not in ("scaled", "classic"):
            raise InvalidInputError(f"unknown LiSSA variant {self.variant!r}")
        if self.sampling not in ("point", "full"):
            raise InvalidInputError(f"unknown LiSSA sampling {self.sampling!r}")
        if self.variant == "scaled" and not (0 < self.step_size <= 1):
            raise InvalidInputError("step size must lie in (0, 1]")


class LissaResult(NamedTuple):
    h: np.ndarray
    converged: bool
    residual_norm: float  # ||H h - v|| / ||v|| with the full Hessian
    n_iter: int


def run_lissa(problem: Problem, theta, cfg: LissaConfig, h0=None,
              callback: Callable[[int, np.ndarray], None] | None = None) -> LissaResult:
    """Estimate ``H^{-1} v`` by the LiSSA recursion.

    ``-h`` from the scaled point-sampled variant coincides step for step with
    the tangent of :func:`run_sgdf` under ``reg_cadence="per_update"`` when
    the regularizer is ``Linear(v)`` at ``s = 0``.
    """
    theta = np.asarray(theta, dtype=float)
    v = cfg.v
    if v.shape != (problem.p,):
        raise InvalidInputError(f"v must have shape ({problem.p},)")
    h = np.zeros(problem.p) if h0 is None else np.array(h0, dtype=float)
    reg, s, X = problem.regularizer, problem.s, problem.X
    eta = cfg.step_size

    if cfg.sampling == "full":
        def hvp(_t, vec):
            return objective_hvp(problem, theta, vec)
    else:
        if problem.n == 0:
            raise InvalidInputError("point-sampled LiSSA needs data")
        order = _flat_order(problem.n, cfg.seed)

        def hvp(_t, vec):
            phi = X[next(order)]
            return 2 * phi * (phi @ vec) + reg.hvp(s, vec)

    for t in range(1, cfg.iterations + 1):
        Ah = hvp(t, h)
        if cfg.variant == "scaled":
            h = h + eta * (v - Ah)
        else:
            h = v + h - Ah
        norm = float(np.linalg.norm(h))
        if not math.isfinite(norm) or norm > DIVERGENCE_LIMIT:
            raise DivergenceError(f"LiSSA diverged at iteration {t} (norm {norm:.3g})")
        if callback is not None:
            callback(t, h)

    vnorm = float(np.linalg.norm(v))
    res = float(np.linalg.norm(objective_hvp(problem, theta, h) - v))
    rel = res / vnorm if vnorm > 0 else res
    return LissaResult(h, rel <= cfg.tol, rel, cfg.iterations)


def _flat_order(n: int, seed: int) -> Iterator[int]:
    for perm in point_orders(n, seed):
        yield from perm


def stationarity_residual(problem: Problem, theta) -> float:
    """``||grad f(theta)||``."""
    return float(np.linalg.norm(objective_grad(problem, np.asarray(theta, dtype=float))))
