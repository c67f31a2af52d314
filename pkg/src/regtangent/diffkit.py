"""Forward-mode dual vectors, Hessian-vector products and a CG solver."""
from __future__ import annotations

import math
from typing import Callable, NamedTuple

import numpy as np

from .exceptions import InvalidInputError, NumericalBreakdownError, SizeError
from .model import FeatureMap, Point, Problem, featurize, loss_and_grad, objective_grad

DENSE_CAP = 512


class DualParams:
    """A value paired with its tangent, ``value + tangent * ds``.

    Arithmetic follows the dual-number rules (``ds**2 = 0``), so any function
    written with ``+ - * @`` propagates the directional derivative alongside
    the value. Mixed operations with ndarrays and scalars treat those as
    constants. When used for trained parameters the tangent is ``dtheta/ds``.
    """

    __slots__ = ("value", "tangent")
    # make ndarray binary operators defer to our reflected methods
    __array_ufunc__ = None

    def __init__(self, value, tangent=None):
        value = np.asarray(value, dtype=float)
        tangent = np.zeros_like(value) if tangent is None else np.asarray(tangent, dtype=float)
        if value.shape != tangent.shape:
            raise InvalidInputError(
                f"value shape {value.shape} does not match tangent shape {tangent.shape}")
        self.value = value
        self.tangent = tangent

    @classmethod
    def _raw(cls, value, tangent):
        d = cls.__new__(cls)
        d.value = value
        d.tangent = tangent
        return d

    def __repr__(self):
        return f"DualParams(value={self.value!r}, tangent={self.tangent!r})"

    def __len__(self):
        return len(self.value)

    @property
    def shape(self):
        return np.shape(self.value)

    def copy(self) -> "DualParams":
        return self._raw(np.copy(self.value), np.copy(self.tangent))

    def __neg__(self):
        return self._raw(-self.value, -self.tangent)

    def __add__(self, other):
        if isinstance(other, DualParams):
            return self._raw(self.value + other.value, self.tangent + other.tangent)
        return self._raw(self.value + other, self.tangent)

    def __radd__(self, other):
        return self._raw(other + self.value, self.tangent)

    def __sub__(self, other):
        if isinstance(other, DualParams):
            return self._raw(self.value - other.value, self.tangent - other.tangent)
        return self._raw(self.value - other, self.tangent)

    def __rsub__(self, other):
        return self._raw(other - self.value, -self.tangent)

    def __mul__(self, other):
        if isinstance(other, DualParams):
            return self._raw(self.value * other.value,
                             self.tangent * other.value + self.value * other.tangent)
        return self._raw(self.value * other, self.tangent * other)

    def __rmul__(self, other):
        return self._raw(other * self.value, other * self.tangent)

    def __truediv__(self, other):
        if isinstance(other, DualParams):
            q = self.value / other.value
            return self._raw(q, (self.tangent - q * other.tangent) / other.value)
        return self._raw(self.value / other, self.tangent / other)

    def __matmul__(self, other):
        if isinstance(other, DualParams):
            return self._raw(self.value @ other.value,
                             self.tangent @ other.value + self.value @ other.tangent)
        return self._raw(self.value @ other, self.tangent @ other)

    def __rmatmul__(self, other):
        return self._raw(other @ self.value, other @ self.tangent)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.value)) and np.all(np.isfinite(self.tangent)))


# ---------------------------------------------------------------------------
# Hessian-vector products
# ---------------------------------------------------------------------------


class HvpOracle:
    """Symmetric linear operator ``v -> H v`` of dimension ``p``."""

    def __init__(self, matvec: Callable[[np.ndarray], np.ndarray], p: int):
        self._matvec = matvec
        self.p = p

    def __call__(self, v):
        return np.asarray(self._matvec(np.asarray(v, dtype=float)), dtype=float)

    @classmethod
    def from_matrix(cls, H) -> "HvpOracle":
        H = np.asarray(H, dtype=float)
        return cls(lambda v: H @ v, H.shape[0])


def loss_hvp(z: Point, theta, v, fmap: FeatureMap) -> np.ndarray:
    """``(d2L/dtheta2) v = 2 phi (phi . v)`` for the squared loss."""
    phi = featurize(z[0], fmap)
    v = np.asarray(v, dtype=float)
    if v.shape != phi.shape:
        raise InvalidInputError("v does not match the feature dimension")
    return 2 * phi * (phi @ v)


def loss_hvp_dual(z: Point, theta, v, fmap: FeatureMap) -> np.ndarray:
    """Same product, read off the tangent of the gradient at ``theta + v ds``."""
    _, g = loss_and_grad(z, DualParams(theta, v), fmap)
    return g.tangent


def objective_hvp(problem: Problem, theta, v) -> np.ndarray:
    """``H v`` with ``H = 2 X^T X + d2R/dtheta2``."""
    v = np.asarray(v, dtype=float)
    X = problem.X
    return 2 * (X.T @ (X @ v)) + problem.regularizer.hvp(problem.s, v)


def objective_hvp_dual(problem: Problem, theta, v) -> np.ndarray:
    return objective_grad(problem, DualParams(theta, v)).tangent


def objective_oracle(problem: Problem, theta) -> HvpOracle:
    theta = np.asarray(theta, dtype=float)
    return HvpOracle(lambda v: objective_hvp(problem, theta, v), problem.p)


def assemble_hessian(problem: Problem, theta=None, cap: int = DENSE_CAP) -> np.ndarray:
    """Dense ``2 X^T X + d2R/dtheta2`` for ``p <= cap``."""
    p = problem.p
    if p > cap:
        raise SizeError(f"dense Hessian requested for p={p} above the cap of {cap}")
    X = problem.X
    H = 2 * (X.T @ X) + problem.regularizer.hessian(problem.s, p)
    return 0.5 * (H + H.T)


# ---------------------------------------------------------------------------
# conjugate gradients
# ---------------------------------------------------------------------------


class CGResult(NamedTuple):
    x: np.ndarray
    converged: bool
    n_iter: int
    residual_norm: float


def cg_solve(oracle: Callable[[np.ndarray], np.ndarray], b, tol: float = 1e-10,
             max_iter: int | None = None, x0=None, refresh: int = 50) -> CGResult:
    """Solve ``H x = b`` for symmetric positive definite ``H`` given as ``oracle``.

    Stops once ``||H x - b|| <= tol * ||b||``. The residual is recomputed from
    scratch every ``refresh`` iterations and before convergence is declared.

    Raises
    ------
    NumericalBreakdownError
        On a non-finite iterate or non-positive curvature ``p . H p``.
    """
    if tol <= 0:
        raise InvalidInputError("tol must be positive")
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if max_iter is None:
        max_iter = 10 * max(n, 1)
    bnorm = float(np.linalg.norm(b))
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0 and x0 is None:
        return CGResult(x, True, 0, 0.0)
    target = tol * bnorm

    r = b - oracle(x) if x0 is not None else b.copy()
    rs = float(r @ r)
    if math.sqrt(rs) <= target:
        return CGResult(x, True, 0, math.sqrt(rs))
    d = r.copy()
    for k in range(1, max_iter + 1):
        Hd = oracle(d)
        curv = float(d @ Hd)
        if not math.isfinite(curv) or curv <= 0.0:
            raise NumericalBreakdownError(
                f"CG breakdown at iteration {k}: curvature {curv!r}")
        alpha = rs / curv
        x = x + alpha * d
        if k % refresh == 0:
            r = b - oracle(x)
        else:
            r = r - alpha * Hd
        rs_new = float(r @ r)
        if not (math.isfinite(rs_new) and np.all(np.isfinite(x))):
            raise NumericalBreakdownError(f"CG produced non-finite values at iteration {k}")
        if math.sqrt(rs_new) <= target:
            r = b - oracle(x)
            rs_new = float(r @ r)
            if math.sqrt(rs_new) <= target:
                return CGResult(x, True, k, math.sqrt(rs_new))
            # recurrence drifted; restart from the true residual
            d = r.copy()
            rs = rs_new
            continue
        d = r + (rs_new / rs) * d
        rs = rs_new
    r = b - oracle(x)
    return CGResult(x, False, max_iter, float(np.linalg.norm(r)))
