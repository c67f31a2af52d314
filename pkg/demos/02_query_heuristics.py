"""Which input should be labeled next?

Scores a grid of candidate inputs with every query heuristic and shows that
the labeled squared total influence and the unlabeled squared loss
derivative give the same curve once both are scaled to unit RMS.
"""
import numpy as np

from regtangent import (Heuristic, closed_form_expected_sq_influence, fit_normal_equations,
                        mc_expected_score, polynomial_problem, regularity_tangent,
                        score_candidates)

problem = polynomial_problem(seed=42, s=0.05)
theta = fit_normal_equations(problem)
theta_dot = regularity_tangent(problem, theta)

xs = np.linspace(0, 1, 21)
curves = {}
for h in Heuristic:
    if h is Heuristic.SLD_labeled:
        continue
    qs = score_candidates(problem, theta, theta_dot, xs, h)
    curves[h.value] = qs.normalized
    print(f"{h.value:>14}: best x = {xs[qs.ranking[0]]:.2f}")

gap = np.max(np.abs(curves["STI_labeled"] - curves["SLD_unlabeled"]))
print(f"max |STI_labeled - SLD_unlabeled| after normalization: {gap:.1e}")

# Averaged over plausible labels the influence itself cancels out, while
# its square has a closed form.
m, se = mc_expected_score(problem, theta, 0.5, "influence", 100_000, seed=0)
print(f"E[influence] at x=0.5: {m:+.2e} +/- {se:.1e}")
m, se = mc_expected_score(problem, theta, 0.5, "squared_influence", 100_000, seed=1)
cf = closed_form_expected_sq_influence(problem, theta, 0.5)
print(f"E[influence^2]: Monte Carlo {m:.4e} +/- {se:.1e}, closed form {cf:.4e}")
