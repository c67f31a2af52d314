"""Query heuristics for choosing which input to label next.

Candidate inputs are unlabeled, so their loss gradient is replaced by the
"unlabeled gradient" ``sigma_bar_x = 2 phi(x)`` (the residual factor dropped).
Reference sets ``T`` are index sets into the training data; the labeled
variants use the reference points' true gradients ``sigma_j``, the unlabeled
variants their ``sigma_bar_j``.

=================  ==============================================
heuristic          score
=================  ==============================================
SLD_labeled        ``(sigma_z . theta_dot)^2`` (needs the label)
SLD_unlabeled      ``noise^2 * (sigma_bar_x . theta_dot)^2``
SI                 ``(sigma_T^T H^{-1} sigma_bar_x)^2``, ``sigma_T = sum_T sigma_j``
SSI_labeled        ``sum_T (sigma_j^T H^{-1} sigma_bar_x)^2``
SSI_unlabeled      ``sum_T (sigma_bar_j^T H^{-1} sigma_bar_x)^2``
STI_labeled        ``(sum_T sigma_j^T H^{-1} sigma_bar_x)^2``
STI_unlabeled      ``(sum_T sigma_bar_j^T H^{-1} sigma_bar_x)^2``
=================  ==============================================
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .exceptions import InvalidInputError
from .influence import HessianSolver, training_gradients
from .model import NoiseModel, Problem, featurize, noise_variance


class Heuristic(str, Enum):
    SLD_labeled = "SLD_labeled"
    SLD_unlabeled = "SLD_unlabeled"
    SI = "SI"
    SSI_labeled = "SSI_labeled"
    SSI_unlabeled = "SSI_unlabeled"
    STI_labeled = "STI_labeled"
    STI_unlabeled = "STI_unlabeled"

    @property
    def needs_tangent(self) -> bool:
        return self in (Heuristic.SLD_labeled, Heuristic.SLD_unlabeled)

    @property
    def needs_label(self) -> bool:
        return self is Heuristic.SLD_labeled


def _heuristic(h) -> Heuristic:
    try:
        return Heuristic(h)
    except ValueError:
        raise InvalidInputError(f"unknown heuristic {h!r}") from None


@dataclass(frozen=True, eq=False)
class QueryScores:
    """Scores for a batch of candidates.

    ``normalized`` has unit RMS unless every raw score is zero, and
    ``ranking`` lists candidate indices best first.
    """

    candidates: np.ndarray
    raw: np.ndarray
    normalized: np.ndarray
    ranking: np.ndarray
    heuristic: str = ""


def rms_normalize(values) -> np.ndarray:
    """Scale ``values`` to unit root-mean-square; all-zero input is returned as zeros."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return v.copy()
    rms = math.sqrt(math.fsum(v * v) / v.size)
    return v / rms if rms > 0 else np.zeros_like(v)


def rank_queries(scores) -> np.ndarray:
    """Candidate indices by descending score, ties broken by ascending index."""
    raw = scores.raw if isinstance(scores, QueryScores) else np.asarray(scores, dtype=float)
    if not np.all(np.isfinite(raw)):
        raise InvalidInputError("scores must be finite")
    return np.argsort(-raw, kind="stable")


def _reference(problem: Problem, reference) -> np.ndarray:
    idx = np.arange(problem.n) if reference is None else np.asarray(reference, dtype=int).ravel()
    if idx.size == 0:
        raise InvalidInputError("reference set must not be empty")
    if np.any((idx < 0) | (idx >= problem.n)):
        raise InvalidInputError("reference indices out of range")
    return idx


def _reference_solves(problem, theta, heuristic, reference, solver):
    """``H^{-1}`` applied to the reference gradients, one column per reference point."""
    idx = _reference(problem, reference)
    if heuristic in (Heuristic.SI, Heuristic.SSI_labeled, Heuristic.STI_labeled):
        G = training_gradients(problem, theta)[idx]
    else:
        G = 2 * problem.X[idx]
    solver = solver if solver is not None else HessianSolver(problem, theta)
    return solver.solve(G.T)


def score_candidates(problem: Problem, theta, theta_dot, candidates, heuristic,
                     noise: NoiseModel | None = None, labels=None, reference=None,
                     solver: HessianSolver | None = None) -> QueryScores:
    """Score every candidate input under one heuristic.

    Parameters
    ----------
    problem, theta :
        The trained model.
    theta_dot : array_like or None
        Regularity tangent; required by the SLD heuristics.
    candidates : array_like
        Raw inputs, shape ``(m,)`` or ``(m, d)``.
    heuristic : Heuristic or str
    noise : NoiseModel, optional
        Label noise for ``SLD_unlabeled``; defaults to the training residual
        variance.
    labels : array_like, optional
        Candidate labels, required by ``SLD_labeled`` only.
    reference : index array, optional
        Reference set for SI/SSI/STI; defaults to the whole training set.

    Returns
    -------
    QueryScores
    """
    h = _heuristic(heuristic)
    theta = np.asarray(theta, dtype=float)
    cand = np.asarray(candidates, dtype=float)
    Phi = problem.features.design(cand)
    if not np.all(np.isfinite(Phi)):
        raise InvalidInputError("candidate inputs must be finite")
    sbar = 2 * Phi

    if h.needs_tangent:
        if theta_dot is None:
            raise InvalidInputError(f"{h.value} needs the regularity tangent")
        td = np.asarray(theta_dot, dtype=float)
        if h is Heuristic.SLD_labeled:
            if labels is None:
                raise InvalidInputError("SLD_labeled needs candidate labels")
            y = np.asarray(labels, dtype=float)
            if y.shape != (Phi.shape[0],) or not np.all(np.isfinite(y)):
                raise InvalidInputError("SLD_labeled needs one finite label per candidate")
            d = (sbar @ td) * (Phi @ theta - y)
            raw = d * d
        else:
            var = (noise if noise is not None else noise_variance(problem, theta)).variance
            d = sbar @ td
            raw = var * (d * d)
    else:
        W = _reference_solves(problem, theta, h, reference, solver)  # (p, |T|)
        infl = sbar @ W  # (m, |T|)
        if h in (Heuristic.SSI_labeled, Heuristic.SSI_unlabeled):
            raw = np.sum(infl * infl, axis=1)
        else:
            tot = infl.sum(axis=1)
            raw = tot * tot

    raw = np.asarray(raw, dtype=float)
    return QueryScores(cand, raw, rms_normalize(raw), np.argsort(-raw, kind="stable"), h.value)


def score(problem: Problem, theta, theta_dot, candidate, heuristic,
          noise: NoiseModel | None = None, reference=None,
          solver: HessianSolver | None = None) -> float:
    """Score one candidate ``x`` or ``(x, y)``; see :func:`score_candidates`."""
    if isinstance(candidate, tuple):
        x, y = candidate
    else:
        x, y = candidate, None
    h = _heuristic(heuristic)
    if h.needs_label and y is None:
        raise InvalidInputError("SLD_labeled needs a labeled candidate")
    x = np.asarray(x, dtype=float)
    labels = None if y is None else [float(y)]
    qs = score_candidates(problem, theta, theta_dot, x[None, ...], h, noise, labels,
                          reference, solver)
    return float(qs.raw[0])


# ---------------------------------------------------------------------------
# label expectations
# ---------------------------------------------------------------------------


def _reference_gradient(problem, theta, reference) -> np.ndarray:
    idx = _reference(problem, reference)
    return training_gradients(problem, theta)[idx].sum(axis=0)


def closed_form_expected_sq_influence(problem: Problem, theta, x, reference=None,
                                      noise: NoiseModel | None = None,
                                      solver: HessianSolver | None = None) -> float:
    """``E_y[(sigma_T^T H^{-1} sigma_x)^2] = 4 noise^2 (sigma_T^T H^{-1} phi(x))^2``.

    The expectation is over ``y ~ N(theta . phi(x), noise^2)``.
    """
    theta = np.asarray(theta, dtype=float)
    var = (noise if noise is not None else noise_variance(problem, theta)).variance
    phi = featurize(x, problem.features)
    solver = solver if solver is not None else HessianSolver(problem, theta)
    a = float(_reference_gradient(problem, theta, reference) @ solver.solve(phi))
    return 4 * var * a * a


MC_QUANTITIES = ("SLD_labeled", "influence", "squared_influence")


def mc_expected_score(problem: Problem, theta, x, heuristic: str, samples: int = 10_000,
                      seed: int = 0, noise: NoiseModel | None = None, theta_dot=None,
                      reference=None, solver: HessianSolver | None = None):
    """Monte-Carlo average of a label-dependent quantity at input ``x``.

    Labels are drawn as ``y ~ N(theta . phi(x), noise^2)``. ``heuristic`` is
    ``"SLD_labeled"`` (needs ``theta_dot``), ``"influence"`` for the unsquared
    ``-sigma_T^T H^{-1} sigma_x``, or ``"squared_influence"``.

    Returns
    -------
    (mean, stderr) : tuple of float
        ``stderr`` is the sample standard deviation over ``sqrt(samples)``.
    """
    if heuristic not in MC_QUANTITIES:
        raise InvalidInputError(f"unknown Monte-Carlo quantity {heuristic!r}")
    if samples < 100:
        raise InvalidInputError("at least 100 samples are required")
    theta = np.asarray(theta, dtype=float)
    var = (noise if noise is not None else noise_variance(problem, theta)).variance
    phi = featurize(x, problem.features)
    rng = np.random.default_rng(seed)
    y = phi @ theta + math.sqrt(var) * rng.standard_normal(samples)
    resid = phi @ theta - y  # sigma_x = 2 phi resid

    if heuristic == "SLD_labeled":
        if theta_dot is None:
            raise InvalidInputError("SLD_labeled needs the regularity tangent")
        d = 2 * (phi @ np.asarray(theta_dot, dtype=float)) * resid
        vals = d * d
    else:
        solver = solver if solver is not None else HessianSolver(problem, theta)
        a = float(_reference_gradient(problem, theta, reference) @ solver.solve(2 * phi))
        infl = -a * resid
        vals = infl if heuristic == "influence" else infl * infl

    mean = float(np.mean(vals))
    stderr = float(np.std(vals, ddof=1) / math.sqrt(samples))
    return mean, stderr
