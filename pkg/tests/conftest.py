import numpy as np
import pytest

from regtangent import fit_normal_equations, polynomial_problem, regularity_tangent


@pytest.fixture(scope="session")
def poly():
    """The seeded six-point, degree-5 problem at s = 0.05."""
    return polynomial_problem()


@pytest.fixture(scope="session")
def poly_theta(poly):
    return fit_normal_equations(poly)


@pytest.fixture(scope="session")
def poly_tangent(poly, poly_theta):
    return regularity_tangent(poly, poly_theta)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def dense_fit(X, y, s):
    """Independent ridge oracle: plain numpy solve of (X^T X + s I) theta = X^T y."""
    return np.linalg.solve(X.T @ X + s * np.eye(X.shape[1]), X.T @ y)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
