"""Regularity tangents (d theta*/ds) for regularized least squares, and what they buy:
influence functions, active-learning query scores and regularity selection."""

from .exceptions import (ConvergenceWarning, DivergenceError, InvalidInputError,
                         NumericalBreakdownError, NumericalError, SingularSystemError,
                         SizeError, StationarityWarning)
from .model import (L2, Dataset, IdentityFeatures, Linear, MaskedL2, NoiseModel,
                    PolynomialFeatures, Problem, SharedMeanL2, empirical_risk, featurize,
                    loss_and_grad, make_problem, noise_variance, objective, objective_grad,
                    reg_eval, residuals)
from .diffkit import (DualParams, HvpOracle, assemble_hessian, cg_solve, loss_hvp,
                      loss_hvp_dual, objective_hvp, objective_hvp_dual, objective_oracle)
from .optimize import (LissaConfig, LissaResult, TrainConfig, fit_normal_equations,
                       point_orders, run_adam, run_lissa, run_sgd, run_sgdf, train)
from .influence import (HessianSolver, InfluenceReport, TangentResult, compute_tangent, gpert,
                        i_up_loss, i_up_params, i_up_reg, influence_report, loss_gradient,
                        regularity_tangent, self_influence, self_influences,
                        training_gradients)
from .active import (Heuristic, QueryScores, closed_form_expected_sq_influence,
                     mc_expected_score, rank_queries, rms_normalize, score, score_candidates)
from .cv import (JointConfig, JointTrace, SOptConfig, joint_hyperopt, kfold_error,
                 loocv_exact, loocv_losses, optimize_s, train_test_split_indices,
                 validation_error)
from .datasets import gapped_data, polynomial_problem

__version__ = "0.1.0"
