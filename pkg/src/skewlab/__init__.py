"""skewlab: numerics for one-dimensional SDEs involving local time.

Simulates skew diffusions through the exact-in-law transformation of the
local-time equation to an Ito equation, estimates local times by
sigma^2-weighted occupation sums, computes scale-function transforms of
coefficient families, and verifies the limit conditions tying an
eps-family of Ito equations to its skew limit process.
"""

from .errors import (BandwidthTooSmall, ConfigError, ExprEvalError,
                     ExprSyntaxError, InvalidSkew, NoBracket, NonFiniteState,
                     QuadratureFailure, SkewlabError, StepTooCoarse,
                     ValidationError)
from .piecewise import (PiecewiseC2, SecondDerivMeasure, SmoothBranch,
                        identity_piecewise, invert, linear_branch,
                        second_deriv_measure, sgn, sym_deriv)
from .transforms import (CoefficientFamily, ScalarCoefficient, SkewParam,
                         alpha_limit, compose_tau, constant_coefficient,
                         coefficient_from_callable, hat_coeffs, kappa,
                         limit_f_residuals, make_family, phi, scale_density,
                         scale_function, scale_inverse, star_coeffs,
                         tilde_coeff)
from .simulate import (LocalTimeEstimate, NoiseBlock, PathEnsemble, TimeGrid,
                       default_delta, estimate_local_time, euler_maruyama,
                       gen_noise, simulate_eps_family, simulate_skew_sde,
                       transform_ensemble)
from .convergence import (ConditionReport, LemmaResidualReport,
                          WeakDistanceReport, check_condition_a,
                          check_condition_aa, check_condition_aaa,
                          convergence_study, ks_distance, study_report,
                          verify_lemma1, verify_lemma3, wasserstein1)

__version__ = "0.1.0"
