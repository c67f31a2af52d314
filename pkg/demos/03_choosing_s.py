"""Picking the regularity: exact leave-one-out, its perturbative stand-in, and
a joint SGD run that adjusts s while training.
"""
import numpy as np
from scipy.stats import spearmanr

from regtangent import (JointConfig, SOptConfig, gpert, joint_hyperopt, loocv_exact,
                        optimize_s, polynomial_problem, train_test_split_indices,
                        validation_error)

problem = polynomial_problem(seed=42)
grid = np.geomspace(1e-3, 1e1, 20)
loo = [loocv_exact(problem, s) for s in grid]
gp = [gpert(problem, s) for s in grid]
for s, a, b in zip(grid[::3], loo[::3], gp[::3]):
    print(f"s={s:8.4f}  LOOCV={a:8.4f}  Gpert={b:8.4f}")
print("rank correlation:", round(spearmanr(loo, gp).correlation, 3))

s_star, val = optimize_s(problem, SOptConfig(), "loocv")
print(f"LOOCV optimum: s* = {s_star:.4g} (error {val:.4f})")

# Joint optimization: SGD on five training points, log-space steps on s
# driven by the loss derivative at the held-out point.
train, test = train_test_split_indices(problem.n, 0.2, seed=42)
fine = np.geomspace(1e-3, 1e1, 400)
best = fine[np.argmin([validation_error(problem, train, test, s) for s in fine])]
theta, s, trace = joint_hyperopt(problem, JointConfig(train, test, step_size=0.05,
                                                      s_step_size=5e-5, s0=0.05))
print(f"joint run: s = {s:.4g}; best s on the same split by grid search = {best:.4g}")
