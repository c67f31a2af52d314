"""Choosing the regularity: leave-one-out and k-fold errors, 1-D search, joint SGDF.

All searches over ``s`` happen in log space, which keeps ``s`` positive and
treats optima near zero and at large ``s`` evenly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .exceptions import DivergenceError, InvalidInputError, NumericalError, SingularSystemError
from .influence import gpert
from .optimize import (DIVERGENCE_LIMIT, Stepper, TrainConfig, _as_start, _check_divergence,
                       _max_change, fit_normal_equations, point_orders)
from .model import Problem

GOLDEN = (math.sqrt(5) - 1) / 2


# ---------------------------------------------------------------------------
# retraining-based errors
# ---------------------------------------------------------------------------


def _held_out_losses(problem: Problem, folds) -> np.ndarray:
    losses = np.empty(problem.n)
    for fold in folds:
        w = np.ones(problem.n)
        w[fold] = 0.0
        try:
            theta = fit_normal_equations(problem, sample_weight=w)
        except SingularSystemError as exc:
            raise SingularSystemError(
                f"fit without point(s) {sorted(int(i) for i in fold)} is singular: {exc}") from exc
        r = problem.X[fold] @ theta - problem.y[fold]
        losses[fold] = r * r
    return losses


def loocv_losses(problem: Problem, s: float | None = None) -> np.ndarray:
    """Held-out loss of every point after refitting without it."""
    prob = problem if s is None else problem.with_s(s)
    if prob.n < 2:
        raise InvalidInputError("leave-one-out needs at least two points")
    return _held_out_losses(prob, [[j] for j in range(prob.n)])


def loocv_exact(problem: Problem, s: float | None = None) -> float:
    """Exact leave-one-out error ``sum_j L(z_j, theta*_{-j}(s))`` by ``n`` refits."""
    return math.fsum(loocv_losses(problem, s))


def kfold_error(problem: Problem, s: float | None = None, k: int = 5, seed: int = 0) -> float:
    """Summed held-out loss over ``k`` seeded folds; ``k = n`` is leave-one-out."""
    prob = problem if s is None else problem.with_s(s)
    if not 2 <= k <= prob.n:
        raise InvalidInputError(f"k must lie in [2, {prob.n}]")
    perm = np.random.default_rng(seed).permutation(prob.n)
    return math.fsum(_held_out_losses(prob, np.array_split(perm, k)))


def validation_error(problem: Problem, train_idx, test_idx, s: float | None = None) -> float:
    """Loss on ``test_idx`` of the normal-equations fit to ``train_idx``."""
    prob = problem if s is None else problem.with_s(s)
    theta = fit_normal_equations(prob.subset(train_idx))
    r = prob.X[np.asarray(test_idx, dtype=int)] @ theta - prob.y[np.asarray(test_idx, dtype=int)]
    return math.fsum(r * r)


def train_test_split_indices(n: int, test_fraction: float = 0.2, seed: int = 0):
    """Seeded split into sorted ``(train, test)`` index arrays; at least one of each."""
    if n < 2:
        raise InvalidInputError("a split needs at least two points")
    if not 0 < test_fraction < 1:
        raise InvalidInputError("test_fraction must lie in (0, 1)")
    n_test = min(max(1, int(round(n * test_fraction))), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


# ---------------------------------------------------------------------------
# scalar search over s
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SOptConfig:
    """``method`` is ``"grid"`` or ``"golden_section"``; ``tol`` is in log(s)."""

    method: str = "golden_section"
    bounds: tuple = (1e-3, 1e1)
    grid_size: int = 20
    tol: float = 1e-4

    def __post_init__(self):
        lo, hi = self.bounds
        if not (0 < lo < hi and math.isfinite(hi)):
            raise InvalidInputError("bounds must satisfy 0 < s_lo < s_hi")
        if self.grid_size < 3:
            raise InvalidInputError("grid_size must be at least 3")
        if self.method not in ("grid", "golden_section"):
            raise InvalidInputError(f"unknown search method {self.method!r}")
        if not self.tol > 0:
            raise InvalidInputError("tol must be positive")

    def grid(self) -> np.ndarray:
        return np.geomspace(self.bounds[0], self.bounds[1], self.grid_size)


OBJECTIVES: dict[str, Callable[[Problem, float], float]] = {
    "loocv": loocv_exact,
    "gpert": gpert,
}


def _evaluate(fn, problem, s):
    try:
        return float(fn(problem, s))
    except (NumericalError, InvalidInputError) as exc:
        raise type(exc)(f"objective failed at s={s!r}: {exc}") from exc


def golden_section(fn: Callable[[float], float], a: float, b: float, tol: float):
    """Minimize a unimodal ``fn`` on ``[a, b]``; returns ``(argmin, min)``."""
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fn(d)
    return (c, fc) if fc <= fd else (d, fd)


def optimize_s(problem: Problem, cfg: SOptConfig = SOptConfig(), objective: str = "loocv"):
    """Minimize a generalization-error estimate over ``s``.

    A log-spaced grid is always evaluated; ``golden_section`` then refines
    inside the two grid cells around the best grid point.

    Returns
    -------
    (s_star, value) : tuple of float
    """
    if objective not in OBJECTIVES:
        raise InvalidInputError(f"unknown objective {objective!r}")
    fn = OBJECTIVES[objective]
    if objective == "loocv" and problem.n < 2:
        raise InvalidInputError("leave-one-out needs at least two points")
    grid = cfg.grid()
    vals = np.array([_evaluate(fn, problem, s) for s in grid])
    i = int(np.argmin(vals))
    best = (float(grid[i]), float(vals[i]))
    if cfg.method == "grid":
        return best
    lo = math.log(grid[max(i - 1, 0)])
    hi = math.log(grid[min(i + 1, len(grid) - 1)])
    u, val = golden_section(lambda u: _evaluate(fn, problem, math.exp(u)), lo, hi, cfg.tol)
    return (math.exp(u), val) if val <= best[1] else best


# ---------------------------------------------------------------------------
# joint theta / s optimization
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class JointConfig:
    """Settings for :func:`joint_hyperopt`.

    Each training-point update of ``theta`` (SGDF, tracking the tangent) is
    followed, every ``cadence`` updates, by one log-space step on ``s`` taken
    from a test point: ``s <- s * exp(-s_step_size * dL_test/ds)``. Keep
    ``s_step_size`` far below ``step_size``.
    """

    train_idx: np.ndarray
    test_idx: np.ndarray
    step_size: float = 0.05
    s_step_size: float = 5e-5
    cadence: int = 1
    epochs: int = 40_000
    seed: int = 0
    s0: float | None = None
    theta0: np.ndarray | None = None
    schedule: str = "constant"
    decay_epochs: float = 100.0
    tol: float = 1e-10

    def __post_init__(self):
        tr = np.asarray(self.train_idx, dtype=int).ravel()
        te = np.asarray(self.test_idx, dtype=int).ravel()
        object.__setattr__(self, "train_idx", tr)
        object.__setattr__(self, "test_idx", te)
        if tr.size == 0 or te.size == 0:
            raise InvalidInputError("train and test sets must both be nonempty")
        if np.intersect1d(tr, te).size or len(set(tr)) != tr.size or len(set(te)) != te.size:
            raise InvalidInputError("train and test indices must be distinct and disjoint")
        if self.cadence < 1:
            raise InvalidInputError("cadence must be at least 1")
        if self.s_step_size < 0:
            raise InvalidInputError("s_step_size must be nonnegative")
        if self.s0 is not None and not (self.s0 > 0 and math.isfinite(self.s0)):
            raise InvalidInputError("s0 must be positive")

    def train_config(self) -> TrainConfig:
        return TrainConfig(step_size=self.step_size, epochs=self.epochs, seed=self.seed,
                           schedule=self.schedule, decay_epochs=self.decay_epochs,
                           track_tangent=True, tol=self.tol)


class JointTrace(NamedTuple):
    grad_norm: np.ndarray  # norm of the training-point gradient per cycle
    s: np.ndarray          # s after each cycle
    dL_ds: np.ndarray      # test-loss derivative used (0 when no s-step that cycle)


def joint_hyperopt(problem: Problem, cfg: JointConfig):
    """Optimize ``theta`` on the training points and ``s`` on the test points together.

    The training points are visited exactly as :func:`run_sgdf` visits the
    training subproblem, so with ``s_step_size = 0`` the returned parameters
    equal that run bit for bit.

    Returns
    -------
    (theta, s, trace) : DualParams, float, JointTrace
    """
    n = problem.n
    if cfg.train_idx.max() >= n or cfg.test_idx.max() >= n or min(cfg.train_idx.min(), cfg.test_idx.min()) < 0:
        raise InvalidInputError("split indices out of range")
    s = problem.s if cfg.s0 is None else float(cfg.s0)
    if not s > 0:
        raise InvalidInputError("joint optimization needs a positive starting s")
    train = problem.subset(cfg.train_idx).with_s(s)
    tcfg = cfg.train_config()
    stepper = Stepper(train, tcfg, _as_start(train, cfg.theta0, True))
    X_test, y_test = problem.X[cfg.test_idx], problem.y[cfg.test_idx]
    orders = point_orders(train.n, cfg.seed)
    test_orders = point_orders(len(cfg.test_idx), cfg.seed + 1)
    test_queue: list = []

    gnorms, ss, dls = [], [], []
    t = 0
    for epoch in range(cfg.epochs):
        eta = tcfg.step_at(epoch)
        before, s_before = stepper.theta, stepper.s
        for i in next(orders):
            g = stepper.point_step(i, eta)
            t += 1
            dl = 0.0
            if t % cfg.cadence == 0:
                if not test_queue:
                    test_queue = list(next(test_orders))
                j = test_queue.pop(0)
                phi = X_test[j]
                theta = stepper.theta
                dl = float((2 * phi * (phi @ theta.value - y_test[j])) @ theta.tangent)
                stepper.s = stepper.s * math.exp(-cfg.s_step_size * dl)
                if not (math.isfinite(stepper.s) and 0 < stepper.s < DIVERGENCE_LIMIT):
                    raise DivergenceError(f"s left the representable range ({stepper.s!r})")
            gnorms.append(float(np.linalg.norm(g.value)))
            ss.append(stepper.s)
            dls.append(dl)
        stepper.batch_end(eta)
        _check_divergence(stepper.theta)
        if _max_change(stepper.theta, before) < tcfg.tol and stepper.s == s_before:
            break
    trace = JointTrace(np.array(gnorms), np.array(ss), np.array(dls))
    return stepper.theta, stepper.s, trace
