"""Dynamic pricing with covariates under generalized linear demand."""

from .demand import (DemandModel, LinkFunction, ParamVector, PriceRange, ShockSpec, expected_revenue,
                     identity_link, logistic_link, make_link, mean_demand, optimal_price,
                     optimal_price_ab, sample_demand)
from .covariates import CovariateStreamSpec, load_covariates, make_feature, next_covariate
from .estimation import (ConfidenceEllipsoid, DesignMatrix, QuasiMLE, alpha_bar, confidence_radius,
                         design_update, elliptical_potential_audit, quasi_loglik, qmle_fit,
                         qmle_fit_known_gamma, suboptimality_gap)
from .config import ConfigError, ExperimentConfig, load_config
from .harness import (AggregateResult, TrialResult, coverage_audit, potential_audit, run_experiment,
                      run_trial)

__version__ = "0.1.0"
