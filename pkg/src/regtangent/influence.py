"""Regularity tangents and influence functions.

With ``H`` the objective Hessian at a trained ``theta*`` and ``rho`` the
complexity gradient, the regularity tangent is ``theta_dot = -H^{-1} rho``.
Up-weighting a point ``z`` by ``eps * L(z, theta)`` moves the parameters by
``-H^{-1} sigma_z`` per unit ``eps``; the quantities below are contractions of
that vector.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg

from .diffkit import DENSE_CAP, assemble_hessian, cg_solve, objective_hvp, objective_oracle
from .exceptions import (ConvergenceWarning, InvalidInputError, SingularSystemError,
                         StationarityWarning)
from .model import Problem, empirical_risk, featurize, objective_grad
from .optimize import SINGULAR_RCOND, TrainConfig, fit_normal_equations, run_sgdf

TANGENT_METHODS = ("direct", "cg", "sgdf")
STATIONARITY_RTOL = 1e-6
# a stochastic tangent counts as converged when ||H theta_dot + rho|| <= this * ||rho||
SGDF_RESIDUAL_RTOL = 1e-2


# ---------------------------------------------------------------------------
# Hessian solves
# ---------------------------------------------------------------------------


class HessianSolver:
    """Solves ``H x = b`` at fixed ``(problem, theta)``, reusing work across calls.

    ``method="direct"`` factors the dense Hessian once (Cholesky);
    ``method="cg"`` runs matrix-free conjugate gradients for each right-hand
    side. Non-converged CG solves raise a :class:`ConvergenceWarning` and are
    recorded in ``last_converged``.
    """

    def __init__(self, problem: Problem, theta=None, method: str = "direct",
                 tol: float = 1e-12, max_iter: int | None = None):
        if method not in ("direct", "cg"):
            raise InvalidInputError(f"unknown solve method {method!r}")
        self.problem = problem
        self.method = method
        self.tol = tol
        self.max_iter = max_iter
        self.last_converged = True
        self.last_residual = 0.0
        theta = np.zeros(problem.p) if theta is None else np.asarray(theta, dtype=float)
        if method == "direct":
            H = assemble_hessian(problem, theta, cap=DENSE_CAP)
            eig = np.linalg.eigvalsh(H)
            if eig[-1] <= 0 or eig[0] <= SINGULAR_RCOND * eig[-1]:
                raise SingularSystemError(
                    f"Hessian is not positive definite (eigenvalues {eig[0]:.3g} .. {eig[-1]:.3g})")
            self._factor = scipy.linalg.cho_factor(H)
        else:
            self._oracle = objective_oracle(problem, theta)

    def solve(self, b) -> np.ndarray:
        """``H^{-1} b``; ``b`` may be a vector or a ``(p, k)`` block of columns."""
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.problem.p:
            raise InvalidInputError(f"right-hand side must have leading dimension {self.problem.p}")
        if self.method == "direct":
            return scipy.linalg.cho_solve(self._factor, b)
        if b.ndim == 2:
            return np.column_stack([self.solve(col) for col in b.T]) if b.shape[1] else b.copy()
        res = cg_solve(self._oracle, b, tol=self.tol, max_iter=self.max_iter)
        self.last_converged = res.converged
        self.last_residual = res.residual_norm
        if not res.converged:
            warnings.warn(f"CG stopped after {res.n_iter} iterations with residual "
                          f"{res.residual_norm:.3g}", ConvergenceWarning, stacklevel=2)
        return res.x


def check_stationary(problem: Problem, theta, rtol: float = STATIONARITY_RTOL) -> float:
    """Gradient norm at ``theta``; warns when it exceeds ``rtol * (1 + ||X^T y||)``."""
    gnorm = float(np.linalg.norm(objective_grad(problem, np.asarray(theta, dtype=float))))
    scale = 1.0 + float(np.linalg.norm(problem.X.T @ problem.y))
    if gnorm > rtol * scale:
        warnings.warn(f"parameters are not stationary (gradient norm {gnorm:.3g}); "
                      "influence values are approximate", StationarityWarning, stacklevel=3)
    return gnorm


def _solver(problem, theta, solver):
    return solver if solver is not None else HessianSolver(problem, theta)


def loss_gradient(problem: Problem, theta, z) -> np.ndarray:
    """``sigma_z = 2 phi(x) (theta . phi(x) - y)`` for a labeled point ``z = (x, y)``."""
    x, y = z
    if y is None:
        raise InvalidInputError("a labeled point is required")
    phi = featurize(x, problem.features)
    return 2 * phi * (phi @ np.asarray(theta, dtype=float) - float(y))


# ---------------------------------------------------------------------------
# regularity tangent
# ---------------------------------------------------------------------------


class TangentResult(NamedTuple):
    theta_dot: np.ndarray
    method: str
    converged: bool
    residual_norm: float  # ||H theta_dot + rho||


def default_sgdf_config(problem: Problem, seed: int = 0) -> TrainConfig:
    """A 1/t schedule whose first step is safely below the per-point stability limit."""
    X = problem.X
    curv = 2 * float(np.max(np.einsum("ij,ij->i", X, X))) if problem.n else 1.0
    eta0 = min(0.05, 0.5 / max(curv, 1e-12))
    return TrainConfig(step_size=eta0, epochs=40_000, seed=seed, schedule="inverse_time",
                       decay_epochs=400.0, track_tangent=True, tol=0.0)


def compute_tangent(problem: Problem, theta, method: str = "direct",
                    config: TrainConfig | None = None, tol: float = 1e-12) -> TangentResult:
    """Regularity tangent ``-H^{-1} rho`` with convergence information.

    ``method`` is ``"direct"`` (dense Cholesky), ``"cg"`` (matrix-free) or
    ``"sgdf"`` (dual-number SGD started at ``theta`` using ``config``).
    """
    if method not in TANGENT_METHODS:
        raise InvalidInputError(f"unknown tangent method {method!r}")
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (problem.p,):
        raise InvalidInputError(f"theta must have shape ({problem.p},)")
    check_stationary(problem, theta)
    rho = np.asarray(problem.regularizer.rho(problem.s, theta), dtype=float)
    if method == "sgdf":
        cfg = default_sgdf_config(problem) if config is None else config
        theta_dot = run_sgdf(problem, cfg, theta).tangent
        converged = True
    else:
        solver = HessianSolver(problem, theta, method, tol=tol)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            theta_dot = -solver.solve(rho)
        converged = solver.last_converged
    res = float(np.linalg.norm(objective_hvp(problem, theta, theta_dot) + rho))
    if method == "sgdf":
        converged = res <= SGDF_RESIDUAL_RTOL * float(np.linalg.norm(rho)) or not rho.any()
    if not converged:
        warnings.warn(f"{method} tangent did not converge (residual {res:.3g})",
                      ConvergenceWarning, stacklevel=2)
    return TangentResult(theta_dot, method, converged, res)


def regularity_tangent(problem: Problem, theta, method: str = "direct",
                       config: TrainConfig | None = None) -> np.ndarray:
    """``theta_dot = d theta*/ds = -H^{-1} rho``.

    For L2 this is ``-(X^T X + s I)^{-1} theta*``.

    Parameters
    ----------
    problem : Problem
    theta : array_like
        A stationary point of the objective; a :class:`StationarityWarning`
        is raised otherwise.
    method : {"direct", "cg", "sgdf"}
    config : TrainConfig, optional
        Trainer settings for ``method="sgdf"``.

    Returns
    -------
    numpy.ndarray
    """
    return compute_tangent(problem, theta, method, config).theta_dot


# ---------------------------------------------------------------------------
# influence functions
# ---------------------------------------------------------------------------


def i_up_params(problem: Problem, theta, z, solver: HessianSolver | None = None) -> np.ndarray:
    """``-H^{-1} sigma_z``: parameter change per unit up-weighting of ``z``."""
    return -_solver(problem, theta, solver).solve(loss_gradient(problem, theta, z))


def i_up_loss(problem: Problem, theta, z_test, z, solver: HessianSolver | None = None) -> float:
    """``-sigma_test^T H^{-1} sigma_z``; symmetric in its two points."""
    s_test = loss_gradient(problem, theta, z_test)
    return float(-s_test @ _solver(problem, theta, solver).solve(loss_gradient(problem, theta, z)))


def i_up_reg(problem: Problem, theta, theta_dot, z) -> float:
    """Influence of ``z`` on the complexity ``dR/ds``: ``sigma_z . theta_dot``.

    Equal to ``rho . i_up_params(z)``, but needs no Hessian solve once the
    tangent is known.
    """
    return float(loss_gradient(problem, theta, z) @ np.asarray(theta_dot, dtype=float))


def self_influence(problem: Problem, theta, z, solver: HessianSolver | None = None) -> float:
    """``sigma_z^T H^{-1} sigma_z`` (nonnegative)."""
    g = loss_gradient(problem, theta, z)
    return max(float(g @ _solver(problem, theta, solver).solve(g)), 0.0)


def training_gradients(problem: Problem, theta) -> np.ndarray:
    """Rows ``sigma_i`` for every training point, shape ``(n, p)``."""
    r = problem.X @ np.asarray(theta, dtype=float) - problem.y
    return 2 * r[:, None] * problem.X


def self_influences(problem: Problem, theta, solver: HessianSolver | None = None) -> np.ndarray:
    S = training_gradients(problem, theta)
    if S.shape[0] == 0:
        return np.zeros(0)
    W = _solver(problem, theta, solver).solve(S.T)
    return np.maximum(np.einsum("ij,ji->i", S, W), 0.0)


def gpert(problem: Problem, s: float | None = None, theta=None) -> float:
    """Perturbative leave-one-out error: empirical risk plus summed self-influences.

    Trains by the normal equations at ``s`` (default ``problem.s``) unless
    ``theta`` is given. The regularizer value is not included, so the result
    is comparable with an exact leave-one-out error.
    """
    prob = problem if s is None else problem.with_s(s)
    theta = fit_normal_equations(prob) if theta is None else np.asarray(theta, dtype=float)
    return empirical_risk(prob, theta) + math.fsum(self_influences(prob, theta))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class InfluenceReport:
    """Per-training-point influence values at a trained model."""

    indices: np.ndarray
    i_up_reg: np.ndarray
    self_influence: np.ndarray
    i_up_loss: np.ndarray | None = None
    test_set: str | None = None
    s: float = 0.0
    method: str = "direct"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.indices)
        for name in ("i_up_reg", "self_influence", "i_up_loss"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise InvalidInputError(f"{name} has {len(arr)} entries for {n} points")


def influence_report(problem: Problem, theta, theta_dot=None, test_points: Sequence | None = None,
                     test_set: str | None = None, method: str = "direct") -> InfluenceReport:
    """Influence values for every training point.

    ``i_up_loss`` (when ``test_points`` are given) is the influence on the
    summed loss over the test points.
    """
    theta = np.asarray(theta, dtype=float)
    if theta_dot is None:
        theta_dot = regularity_tangent(problem, theta, method)
    solver = HessianSolver(problem, theta, "direct" if method == "sgdf" else method)
    S = training_gradients(problem, theta)
    reg = S @ np.asarray(theta_dot, dtype=float)
    selfi = self_influences(problem, theta, solver)
    iloss = None
    if test_points is not None:
        pts = list(test_points)
        g_test = sum((loss_gradient(problem, theta, z) for z in pts), np.zeros(problem.p))
        iloss = -(S @ solver.solve(g_test))
    return InfluenceReport(np.arange(problem.n), reg, selfi, iloss, test_set, problem.s, method)
