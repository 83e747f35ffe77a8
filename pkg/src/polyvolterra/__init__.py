"""Moments of polynomial Volterra processes, computed three independent ways.

Deterministic solvers for the lifted moment system, Monte Carlo simulation
of the stochastic Volterra equation and a killed pure-jump dual estimator,
plus tools to cross-check them.
"""

from .config import ConfigError, ExperimentConfig, config_from_dict, load_config
from .convolution import (GridFunction, GridMismatch, compute_EB, discrete_convolve,
                          solve_resolvent_RB, verify_resolvent)
from .grid import Grid
from .harness import (compare_estimators, emit_convergence_study, run_experiment,
                      validate_config)
from .jump_dual import (IneligibleKernel, jump_dual_moment_1d, jump_dual_moment_inhom,
                        jump_dual_moment_multi, kappa_integral, simulate_jump_dual_1d,
                        simulate_jump_dual_inhom)
from .kernels import (Constant, Exponential, Fractional, ProductKernel, SumKernel,
                      Tabulated, estimate_gamma, is_jump_dual_eligible, kernel_from_config)
from .model import (JacobiInterval, PolyModel, UnitBall, check_ball_drift_condition,
                    enumerate_index_set, model_from_config, multi_indices, validate_model)
from .moments import (classical_moments_ode, first_moment_voc, moments_at_diagonal,
                      reconstruct_moments, second_moment_voc, solve_all_coefficients,
                      solve_coefficients, solve_moments, solve_moments_picard, voc_moments,
                      affine_moments_recursive)
from .simulation import (PathEnsemble, invariance_report, mc_moment, simulate_ball,
                         simulate_jacobi, simulate_paths)

__version__ = "0.1.0"
