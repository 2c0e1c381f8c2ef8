"""Signed measures for infinite-width shallow networks with exact KRu norms and sparse solvers."""
from .errors import (CertificationError, DegenerateExtremal, DemoCheckFailed, IllPosednessWarning,
                     InputError, InvalidMeasure, InvalidParameter, KRError, NumericalError,
                     OracleSizeExceeded, SpaceMismatch, UnbalancedInput)
from .measure import (Atom, DiscreteMeasure, PointedSpace, add, balance_split, canonicalize, dipole,
                      dirac, empty, from_atoms, jordan_split, measure, p_moment, rescale_pushforward,
                      scale, total_mass, tv_norm)
from .transport import (TransportResult, brute_force_w1, kr_norm, kru_distance, kru_norm,
                        kru_subgradient, w1_distance)
from .network import (Activation, Dataset, feature_grad_theta, feature_value, moment_map,
                      moment_map_inverse, realize, realize_batch, uniform_error)
from .regularizer import (RegParams, extremal_dipole_scale, extremal_dirac_scale, g_alpha_beta,
                          weighted_dual_norm)
from .problem import Problem, objective
from .fixed_support import solve_fixed_support
from .insertion import insert_dipole, insert_dirac
from .solver import SolveReport, conditional_gradient_solve, solve_distillation, solve_fusion
from .datasets import InputDistribution, generate_dataset
from .experiments import BetaSchedule, ExperimentConfig, large_data_experiment
from .demos import demo_dipoles, demo_kr_vs_wass, demo_mass_escape

__version__ = "0.1.0"
