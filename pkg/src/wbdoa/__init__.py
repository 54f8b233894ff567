"""Fully Bayesian wideband direction-of-arrival detection, estimation, and
latent source-signal reconstruction via non-reversible jump MCMC."""

from .inference import (
    DetectionResult,
    MixtureLabeling,
    Reconstruction,
    choose_kappa,
    detect_order,
    reconstruct_from_trace,
    reconstruct_sources,
    reconstruction_mean,
    relabel,
    summarize,
)
from .model import (
    FreqData,
    LogPosterior,
    ModelConfig,
    ModelState,
    collapsed_loglik_dense,
    collapsed_loglik_freq,
    log_posterior,
    log_prior_local,
    log_prior_order,
    prepare_freq_data,
    prior_cov_stripe,
    steering_stripe,
)
from .sampler import (
    ChainTrace,
    SamplerConfig,
    birth_log_ratio,
    death_log_ratio,
    make_rng,
    nrjmcmc_step,
    run_chain,
    slice_sample_coordinate,
    slice_update,
)
from .signals import (
    ArrayGeometry,
    FilterConfig,
    SourceSpec,
    delay_taps,
    fractional_delay_spectrum,
    synthesize_sources,
    ula_delay,
)
from .stripe import (
    DecompositionFailure,
    LdlFactors,
    StripeMatrix,
    block_ldl,
    densify,
    forward_substitute,
    quadratic_form,
    stripe_add,
    stripe_adjoint,
    stripe_logdet,
    stripe_mul,
)

__version__ = "0.1.0"
