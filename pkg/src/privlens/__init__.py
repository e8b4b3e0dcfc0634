"""Distribution privacy for recoverable query responses."""

from .simplex import (FunctionSpec, NType, channel, enumerate_ntypes, kl_divergence,
                      ntype_mass, pmf, push_forward, variational_distance)
from .mechanisms import (LocallyIdenticalQR, RecoverabilityViolation, RhoQR, build_V1,
                         build_V2, build_Wl, ldp_rho_cap, level_of_rho, validate_rho_qr)
from .estimators import (EstimatorTable, LocallyUniformEstimator, default_smooth_schedule,
                         ml_locally_uniform_estimate, reverse_iprojection)
from .bounds import (Lambda_n, achievability_lower_bound, converse_upper_bound,
                     gamma_n_inner, lambda_n, min_valid_n, omega)

__version__ = '0.1.0'

__all__ = [
    'FunctionSpec', 'NType', 'channel', 'enumerate_ntypes', 'kl_divergence', 'ntype_mass',
    'pmf', 'push_forward', 'variational_distance',
    'LocallyIdenticalQR', 'RecoverabilityViolation', 'RhoQR', 'build_V1', 'build_V2',
    'build_Wl', 'ldp_rho_cap', 'level_of_rho', 'validate_rho_qr',
    'EstimatorTable', 'LocallyUniformEstimator', 'default_smooth_schedule',
    'ml_locally_uniform_estimate', 'reverse_iprojection',
    'Lambda_n', 'achievability_lower_bound', 'converse_upper_bound', 'gamma_n_inner',
    'lambda_n', 'min_valid_n', 'omega',
]
