"""How trained parameters move when the regularity changes.

Fit a degree-5 polynomial to six gapped points, then compute d theta*/ds
three ways (dense solve, conjugate gradients, dual-number SGD) and compare
each with finite differences of refits.
"""
import numpy as np

from regtangent import (TrainConfig, compute_tangent, fit_normal_equations, polynomial_problem,
                        run_sgdf)

problem = polynomial_problem(seed=42, s=0.05)
theta = fit_normal_equations(problem)
print("data x:", np.round(problem.dataset.inputs, 3))
print("theta* at s=0.05:", np.round(theta, 4))

# Finite differences of refits are the reference.
d = 1e-4
fd = (fit_normal_equations(problem.with_s(0.05 + d))
      - fit_normal_equations(problem.with_s(0.05 - d))) / (2 * d)

for method in ("direct", "cg"):
    td = compute_tangent(problem, theta, method).theta_dot
    print(f"{method:>6}: rel. error vs refits = {np.linalg.norm(td - fd) / np.linalg.norm(fd):.2e}")

# SGDF: the same SGD loop run on (theta, theta_dot) pairs. A 1/t step
# schedule removes most of the step-size bias in the tangent.
cfg = TrainConfig(step_size=0.05, epochs=40_000, schedule="inverse_time", decay_epochs=400)
dual = run_sgdf(problem, cfg)
print(f"  sgdf: rel. error vs refits = {np.linalg.norm(dual.tangent - fd) / np.linalg.norm(fd):.2e}")

# The tangent tells us where the fit is sensitive to s: between the two
# clusters of data, where nothing pins the curve down.
xs = np.linspace(0, 1, 11)
sens = problem.features.design(xs) @ fd
for x, v in zip(xs, sens):
    print(f"x={x:.1f}  d f(x)/ds = {v:+.3f}  " + "#" * int(min(20 * abs(v), 60)))
