"""Seeded toy data: a handful of noisy points on [0, 1] with an empty middle."""
from __future__ import annotations

import numpy as np

from .model import L2, Dataset, PolynomialFeatures, Problem


def gapped_data(n: int = 6, seed: int = 42, gap: tuple = (0.3, 0.7),
                noise: float = 0.1) -> Dataset:
    """``y = sin(pi x) + N(0, noise^2)`` with ``x`` drawn outside ``gap``.

    Half the inputs are uniform on ``[0, gap[0]]``, the rest on ``[gap[1], 1]``,
    so a polynomial fit is left to interpolate across the middle.
    """
    rng = np.random.default_rng(seed)
    left = n // 2
    x = np.sort(np.concatenate([rng.uniform(0.0, gap[0], left),
                                rng.uniform(gap[1], 1.0, n - left)]))
    y = np.sin(np.pi * x) + rng.normal(0.0, noise, n)
    return Dataset(x, y)


def polynomial_problem(seed: int = 42, n: int = 6, degree: int = 5,
                       s: float = 0.05) -> Problem:
    """The degree-``degree`` L2-regularized fit to :func:`gapped_data`."""
    return Problem(gapped_data(n, seed), PolynomialFeatures(degree), L2(), s)
