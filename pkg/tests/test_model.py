import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from regtangent import (L2, Dataset, IdentityFeatures, InvalidInputError, Linear, MaskedL2,
                        NoiseModel, PolynomialFeatures, Problem, SharedMeanL2, featurize,
                        loss_and_grad, make_problem, noise_variance, objective, objective_grad,
                        reg_eval)

finite = st.floats(-3, 3, allow_nan=False)
vec3 = arrays(float, 3, elements=finite)


def one_d(points, s=0.0, reg=None):
    x, y = zip(*points)
    return make_problem(x, y, regularizer=reg, s=s)


# --- featurize -------------------------------------------------------------

def test_polynomial_features():
    assert np.array_equal(featurize(2, PolynomialFeatures(5)), [1, 2, 4, 8, 16, 32])
    assert np.array_equal(featurize(0, PolynomialFeatures(5)), [1, 0, 0, 0, 0, 0])
    assert np.array_equal(featurize(1, PolynomialFeatures(2)), [1, 1, 1])


def test_feature_errors():
    with pytest.raises(InvalidInputError):
        featurize([1.0, 2.0], IdentityFeatures(3))
    with pytest.raises(InvalidInputError):
        featurize([1.0, 2.0], PolynomialFeatures(2))
    with pytest.raises(InvalidInputError):
        featurize(np.nan, PolynomialFeatures(2))


def test_design_matches_featurize():
    fmap = PolynomialFeatures(4)
    xs = np.linspace(-1, 2, 7)
    assert np.array_equal(fmap.design(xs), np.stack([featurize(x, fmap) for x in xs]))


def test_dataset_validation():
    with pytest.raises(InvalidInputError):
        Dataset([1.0, 2.0], [1.0])
    with pytest.raises(InvalidInputError):
        Dataset([1.0, np.inf], [1.0, 2.0])
    d = Dataset([1.0, 2.0], [3.0, 4.0])
    with pytest.raises(ValueError):
        d.labels[0] = 5.0


# --- loss ------------------------------------------------------------------

@pytest.mark.parametrize("z, theta, expected", [
    ((1.0, 1.0), [1.0], (0.0, [0.0])),
    ((1.0, 0.0), [1.0], (1.0, [2.0])),
    ((2.0, 1.0), [1.0], (1.0, [4.0])),
])
def test_loss_and_grad_examples(z, theta, expected):
    L, g = loss_and_grad(z, np.array(theta), IdentityFeatures(1))
    assert L == expected[0]
    assert np.array_equal(g, expected[1])


@settings(max_examples=50, deadline=None)
@given(x=vec3, y=finite, theta=vec3)
def test_loss_gradient_finite_difference(x, y, theta):
    fmap = IdentityFeatures(3)
    _, g = loss_and_grad((x, y), theta, fmap)
    h = 1e-6
    fd = np.array([(loss_and_grad((x, y), theta + h * e, fmap)[0]
                    - loss_and_grad((x, y), theta - h * e, fmap)[0]) / (2 * h)
                   for e in np.eye(3)])
    assert np.linalg.norm(fd - g) <= 1e-6 * max(np.linalg.norm(g), 1.0)


# --- regularizers ----------------------------------------------------------

def test_reg_eval_examples():
    r = reg_eval(L2(), 1.0, [1.0, -2.0])
    assert r.value == 5 and np.array_equal(r.grad, [2, -4]) and np.array_equal(r.rho, [2, -4])
    r = reg_eval(MaskedL2((0,)), 2.0, [3.0, 4.0])
    assert r.value == 18 and np.array_equal(r.rho, [6, 0])
    r = reg_eval(Linear(np.array([1.0, 0.0])), 0.5, [7.0, 9.0])
    assert np.array_equal(r.grad, [0.5, 0]) and np.array_equal(r.rho, [1, 0])
    assert np.array_equal(r.hvp(np.array([1.0, 1.0])), [0, 0])


def test_shared_mean_rho():
    r = reg_eval(SharedMeanL2(np.array([1.0, 1.0])), 3.0, [2.0, 0.0])
    assert np.array_equal(r.rho, [2, -2])
    assert r.value == 6.0


def test_regularizer_dimension_checks():
    with pytest.raises(InvalidInputError):
        Problem(Dataset([1.0], [1.0]), PolynomialFeatures(1), MaskedL2((2,)), 1.0)
    with pytest.raises(InvalidInputError):
        Problem(Dataset([1.0], [1.0]), PolynomialFeatures(1), Linear(np.ones(3)), 1.0)
    with pytest.raises(InvalidInputError):
        Problem(Dataset([1.0], [1.0]), PolynomialFeatures(1), L2(), -1.0)


REGS = [L2(), MaskedL2((0, 2)), SharedMeanL2(np.array([0.5, -1.0, 2.0])),
        Linear(np.array([1.0, -2.0, 0.5]))]


@pytest.mark.parametrize("reg", REGS, ids=lambda r: type(r).__name__)
@settings(max_examples=30, deadline=None)
@given(theta=vec3, s=st.floats(0.01, 3))
def test_regularizer_finite_differences(reg, theta, s):
    h = 1e-5
    r = reg_eval(reg, s, theta)
    g_fd = np.array([(reg.value(s, theta + h * e) - reg.value(s, theta - h * e)) / (2 * h)
                     for e in np.eye(3)])
    assert np.linalg.norm(g_fd - r.grad) <= 1e-6 * max(np.linalg.norm(r.grad), 1.0)
    rho_fd = (np.asarray(reg.grad(s + h, theta)) - np.asarray(reg.grad(s - h, theta))) / (2 * h)
    assert np.linalg.norm(rho_fd - r.rho) <= 1e-6 * max(np.linalg.norm(r.rho), 1.0)
    v = np.array([0.3, -0.7, 1.1])
    hvp_fd = (np.asarray(reg.grad(s, theta + h * v)) - np.asarray(reg.grad(s, theta - h * v))) / (2 * h)
    assert np.linalg.norm(hvp_fd - r.hvp(v)) <= 1e-6 * max(np.linalg.norm(r.hvp(v)), 1.0)


@settings(max_examples=30, deadline=None)
@given(theta=vec3, s=st.floats(0, 5))
def test_full_mask_equals_l2(theta, s):
    a, b = reg_eval(MaskedL2((0, 1, 2)), s, theta), reg_eval(L2(), s, theta)
    assert a.value == b.value
    assert np.array_equal(a.grad, b.grad) and np.array_equal(a.rho, b.rho)


# --- objective -------------------------------------------------------------

def test_objective_examples():
    assert objective(one_d([(1, 1)], s=1.0), [0.0]) == 1.0
    assert objective(one_d([(1, 1)], s=1.0), [1.0]) == 1.0
    assert objective(one_d([(1, 1), (1, 0)]), [0.5]) == 0.5


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_objective_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    x, y, theta = rng.normal(size=8), rng.normal(size=8), rng.normal(size=4)
    perm = rng.permutation(8)
    a = objective(make_problem(x, y, degree=3, s=0.3), theta)
    b = objective(make_problem(x[perm], y[perm], degree=3, s=0.3), theta)
    assert a == pytest.approx(b, rel=1e-14, abs=1e-14)


def test_objective_grad_finite_difference(poly):
    rng = np.random.default_rng(3)
    theta = rng.normal(size=poly.p)
    g = objective_grad(poly, theta)
    h = 1e-6
    fd = np.array([(objective(poly, theta + h * e) - objective(poly, theta - h * e)) / (2 * h)
                   for e in np.eye(poly.p)])
    assert np.linalg.norm(fd - g) <= 1e-6 * np.linalg.norm(g)


# --- noise -----------------------------------------------------------------

def test_noise_variance_examples():
    assert noise_variance(one_d([(1, 1), (1, 0)]), [0.5]).variance == 0.25
    assert noise_variance(one_d([(1, 1)]), [1.0]).variance == 1e-12
    assert noise_variance(one_d([(1, 2), (1, 0)]), [1.0]).variance == 1.0


def test_noise_model():
    assert NoiseModel(0.25).alpha == 2.0
    with pytest.raises(InvalidInputError):
        NoiseModel(-1.0)
