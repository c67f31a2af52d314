"""Datasets, feature maps, squared loss, regularizers and the regularized objective.

The training objective is the unnormalized sum

    f(theta, s) = sum_i (theta . phi(x_i) - y_i)**2 + R(s, theta)

so the Hessian of the loss part is ``2 X^T X`` with ``X`` the design matrix.

Everything that touches ``theta`` is written with plain arithmetic operators so
that a :class:`regtangent.diffkit.DualParams` can be pushed through it in place
of an ndarray.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, NamedTuple, Sequence, Union

import numpy as np

from .exceptions import InvalidInputError

DEFAULT_NOISE_FLOOR = 1e-12

Point = tuple  # (x, y); x is a scalar or a 1-D array


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# data and features
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labeled data points ``z_i = (x_i, y_i)``.

    ``inputs`` has shape ``(n,)`` for scalar inputs or ``(n, d)`` for vector
    inputs; ``labels`` has shape ``(n,)``.
    """

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float)
        y = np.asarray(self.labels, dtype=float)
        if y.ndim != 1:
            raise InvalidInputError("labels must be a 1-D sequence of scalars")
        if x.ndim not in (1, 2):
            raise InvalidInputError("inputs must be scalars or fixed-length vectors")
        if x.shape[0] != y.shape[0]:
            raise InvalidInputError(
                f"{x.shape[0]} inputs but {y.shape[0]} labels")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise InvalidInputError("dataset contains non-finite values")
        object.__setattr__(self, "inputs", _frozen(x))
        object.__setattr__(self, "labels", _frozen(y))

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    def __len__(self) -> int:
        return self.n

    def point(self, i: int) -> Point:
        return self.inputs[i], float(self.labels[i])

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.inputs[idx], self.labels[idx])


@dataclass(frozen=True)
class PolynomialFeatures:
    """Scalar ``x`` to ``(1, x, ..., x**degree)``."""

    degree: int

    def __post_init__(self):
        if self.degree < 0:
            raise InvalidInputError("polynomial degree must be nonnegative")

    @property
    def p(self) -> int:
        return self.degree + 1

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 0:
            raise InvalidInputError("polynomial features need a scalar input")
        return x ** np.arange(self.p)

    def design(self, inputs) -> np.ndarray:
        x = np.asarray(inputs, dtype=float)
        if x.ndim != 1:
            raise InvalidInputError("polynomial features need scalar inputs")
        return x[:, None] ** np.arange(self.p)


@dataclass(frozen=True)
class IdentityFeatures:
    """Raw ``dim``-vectors used as features unchanged."""

    dim: int

    @property
    def p(self) -> int:
        return self.dim

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.dim,):
            raise InvalidInputError(
                f"identity features expect a vector of length {self.dim}, got shape {x.shape}")
        return x.copy()

    def design(self, inputs) -> np.ndarray:
        x = np.asarray(inputs, dtype=float)
        if x.ndim == 1 and self.dim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise InvalidInputError(
                f"identity features expect inputs of shape (n, {self.dim})")
        return x.copy()


FeatureMap = Union[PolynomialFeatures, IdentityFeatures]


def featurize(x, fmap: FeatureMap) -> np.ndarray:
    """Feature vector ``phi(x)``."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("input is not finite")
    return fmap(x)


# ---------------------------------------------------------------------------
# regularizers
# ---------------------------------------------------------------------------
#
# Each regularizer R(s, theta) provides
#   value(s, theta)  R
#   grad(s, theta)   dR/dtheta            (accepts dual s and theta)
#   rho(s, theta)    d2R/(ds dtheta)      the complexity gradient
#   hvp(s, v)        (d2R/dtheta2) v
#   hessian(s, p)    dense d2R/dtheta2


@dataclass(frozen=True)
class L2:
    """``s * ||theta||^2``"""

    def validate(self, p: int) -> None:
        pass

    def value(self, s, theta):
        return s * (theta @ theta)

    def grad(self, s, theta):
        return 2 * s * theta

    def rho(self, s, theta):
        return 2 * theta

    def hvp(self, s, v):
        return 2 * s * v

    def hessian(self, s, p: int) -> np.ndarray:
        return 2 * s * np.eye(p)


@dataclass(frozen=True)
class MaskedL2:
    """``s * ||theta_M||^2`` over the index set ``mask``."""

    mask: tuple

    def __post_init__(self):
        object.__setattr__(self, "mask", tuple(sorted({int(i) for i in self.mask})))

    def validate(self, p: int) -> None:
        if any(i < 0 or i >= p for i in self.mask):
            raise InvalidInputError(f"mask indices must lie in [0, {p})")

    def _m(self, p: int) -> np.ndarray:
        m = np.zeros(p)
        m[list(self.mask)] = 1.0
        return m

    def value(self, s, theta):
        tm = self._m(len(theta)) * theta
        return s * (tm @ tm)

    def grad(self, s, theta):
        return 2 * s * (self._m(len(theta)) * theta)

    def rho(self, s, theta):
        return 2 * (self._m(len(theta)) * theta)

    def hvp(self, s, v):
        return 2 * s * (self._m(len(v)) * v)

    def hessian(self, s, p: int) -> np.ndarray:
        return 2 * s * np.diag(self._m(p))


@dataclass(frozen=True, eq=False)
class SharedMeanL2:
    """``s * ||theta - center||^2``; pulls parameters toward a shared vector."""

    center: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", _frozen(self.center))

    def validate(self, p: int) -> None:
        if self.center.shape != (p,):
            raise InvalidInputError(f"center must have length {p}")

    def value(self, s, theta):
        d = theta - self.center
        return s * (d @ d)

    def grad(self, s, theta):
        return 2 * s * (theta - self.center)

    def rho(self, s, theta):
        return 2 * (theta - self.center)

    def hvp(self, s, v):
        return 2 * s * v

    def hessian(self, s, p: int) -> np.ndarray:
        return 2 * s * np.eye(p)


@dataclass(frozen=True, eq=False)
class Linear:
    """``s * theta . direction``; its complexity gradient is ``direction``.

    Used to pose an arbitrary inverse-Hessian-vector product ``H^{-1} v`` as a
    regularity tangent.
    """

    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "direction", _frozen(self.direction))

    def validate(self, p: int) -> None:
        if self.direction.shape != (p,):
            raise InvalidInputError(f"direction must have length {p}")

    def value(self, s, theta):
        return s * (theta @ self.direction)

    def grad(self, s, theta):
        return s * self.direction

    def rho(self, s, theta):
        return self.direction.copy()

    def hvp(self, s, v):
        return np.zeros_like(np.asarray(v, dtype=float))

    def hessian(self, s, p: int) -> np.ndarray:
        return np.zeros((p, p))


Regularizer = Union[L2, MaskedL2, SharedMeanL2, Linear]


class RegEval(NamedTuple):
    value: float
    grad: np.ndarray
    rho: np.ndarray
    hvp: Callable[[np.ndarray], np.ndarray]


def reg_eval(reg: Regularizer, s: float, theta) -> RegEval:
    """Value, gradient, complexity gradient and Hessian operator of ``reg``."""
    theta = np.asarray(theta, dtype=float)
    reg.validate(theta.shape[0])
    return RegEval(
        float(reg.value(s, theta)),
        np.asarray(reg.grad(s, theta), dtype=float),
        np.asarray(reg.rho(s, theta), dtype=float),
        lambda v: reg.hvp(s, np.asarray(v, dtype=float)),
    )


# ---------------------------------------------------------------------------
# problem and objective
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    """Label noise variance ``sigma^2`` (equivalently ``alpha = 1/(2 sigma^2)``)."""

    variance: float

    def __post_init__(self):
        if not (math.isfinite(self.variance) and self.variance >= 0):
            raise InvalidInputError("noise variance must be finite and nonnegative")

    @property
    def alpha(self) -> float:
        return math.inf if self.variance == 0 else 0.5 / self.variance


@dataclass(frozen=True, eq=False)
class Problem:
    """A dataset, a feature map, a regularizer and the regularity ``s``."""

    dataset: Dataset
    features: FeatureMap
    regularizer: Regularizer = field(default_factory=L2)
    s: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.s) and self.s >= 0):
            raise InvalidInputError("regularity s must be finite and nonnegative")
        object.__setattr__(self, "s", float(self.s))
        self.regularizer.validate(self.p)

    @property
    def p(self) -> int:
        return self.features.p

    @property
    def n(self) -> int:
        return self.dataset.n

    @cached_property
    def X(self) -> np.ndarray:
        X = self.features.design(self.dataset.inputs)
        X.setflags(write=False)
        return X

    @property
    def y(self) -> np.ndarray:
        return self.dataset.labels

    def with_s(self, s: float) -> "Problem":
        return replace(self, s=s)

    def with_dataset(self, dataset: Dataset) -> "Problem":
        return replace(self, dataset=dataset)

    def with_regularizer(self, regularizer: Regularizer, s: float | None = None) -> "Problem":
        return replace(self, regularizer=regularizer, s=self.s if s is None else s)

    def subset(self, indices) -> "Problem":
        return replace(self, dataset=self.dataset.subset(indices))

    def point(self, i: int) -> Point:
        return self.dataset.point(i)


def loss_and_grad(z: Point, theta, fmap: FeatureMap):
    """Squared loss ``(theta . phi - y)^2`` and its gradient ``2 phi (theta . phi - y)``.

    ``theta`` may be a :class:`~regtangent.diffkit.DualParams`; the results are
    then dual as well.
    """
    x, y = z
    phi = featurize(x, fmap)
    if len(theta) != phi.shape[0]:
        raise InvalidInputError(
            f"theta has length {len(theta)} but features have length {phi.shape[0]}")
    r = phi @ theta - y
    return r * r, 2 * phi * r


def residuals(problem: Problem, theta) -> np.ndarray:
    return problem.X @ np.asarray(theta, dtype=float) - problem.y


def objective(problem: Problem, theta) -> float:
    """``sum_i L(z_i, theta) + R(s, theta)``."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (problem.p,):
        raise InvalidInputError(f"theta must have shape ({problem.p},)")
    r = residuals(problem, theta)
    # fsum keeps the total independent of data order
    return math.fsum(r * r) + float(problem.regularizer.value(problem.s, theta))


def objective_grad(problem: Problem, theta):
    """Gradient of :func:`objective`; dual-aware like :func:`loss_and_grad`."""
    if isinstance(theta, (list, tuple)):
        theta = np.asarray(theta, dtype=float)
    r = problem.X @ theta - problem.y
    return 2 * (problem.X.T @ r) + problem.regularizer.grad(problem.s, theta)


def empirical_risk(problem: Problem, theta) -> float:
    """Unregularized ``sum_i L(z_i, theta)``."""
    r = residuals(problem, theta)
    return math.fsum(r * r)


def noise_variance(problem: Problem, theta, floor: float = DEFAULT_NOISE_FLOOR) -> NoiseModel:
    """Mean squared residual, clamped below at ``floor``."""
    if problem.n < 1:
        raise InvalidInputError("noise variance needs at least one data point")
    r = residuals(problem, theta)
    return NoiseModel(max(math.fsum(r * r) / problem.n, floor))


def make_problem(x: Sequence, y: Sequence, degree: int | None = None,
                 regularizer: Regularizer | None = None, s: float = 0.0) -> Problem:
    """Convenience constructor: polynomial features if ``degree`` is given,
    identity features otherwise."""
    data = Dataset(x, y)
    if degree is not None:
        fmap: FeatureMap = PolynomialFeatures(degree)
    else:
        fmap = IdentityFeatures(1 if data.inputs.ndim == 1 else data.inputs.shape[1])
    return Problem(data, fmap, L2() if regularizer is None else regularizer, s)
