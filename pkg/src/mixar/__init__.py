"""Nonparametric mixture autoregression for transition density estimation.

Fits univariate time series with a truncated stick-breaking mixture of
locally weighted linear autoregressions, supports global and local lag
selection, and provides transition density/mean/quantile functionals,
forecasting, simulation benchmarks, and scoring utilities.
"""

__version__ = "0.1.0"

from .cholesky import (
    CholFactor,
    GaussianParams,
    SingularCovarianceError,
    build_covariance,
    conditional_gaussian,
    factor_covariance,
    gaussian_logpdf,
    marginal_lag_covariance,
    sequential_log_density,
)
from .model import (
    ComponentParams,
    MixingState,
    ModelState,
    SeriesData,
    log_likelihood,
    mixture_weights_q,
    stick_break,
    transition_density,
    transition_log_density,
    transition_mean,
    transition_quantile,
    truncation_error_expectation,
)
from .priors import (
    BaseMeasureState,
    default_hyperparams,
    pi_gamma_defaults,
    prior_transition_mean_draws,
    sample_component_from_g0,
)
from .lagselect import (
    LagSelectionState,
    apply_mask,
    global_dependence_summaries,
    propose_flip_subset,
    update_pi_gamma,
)
from .sampler import Chain, SamplerConfig, run_chain
from .simulate import (
    SimSpec,
    forecast_k_steps,
    generate_series,
    true_transition_density,
    true_transition_mean,
)
from .evaluate import (
    ValidationSet,
    chain_diagnostics,
    kl_divergence_mc,
    lag_inclusion_report,
    mse_transition_mean,
)
