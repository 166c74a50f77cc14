//! Parameter estimation: the latent-state MCMC fit, the reduced-form
//! growth-variance estimator, and posterior summaries.

pub mod diagnostics;
pub mod io;
mod likelihood;
mod priors;
mod reduced;
mod sampler;
mod state;
mod summary;

pub use diagnostics::{describe, quantile_sorted, split_rhat, Moments};
pub use likelihood::{log_likelihood, LogPosterior};
pub use priors::{ln_seed_pmf, seed_day_mean, PriorConfig};
pub use reduced::{estimate_dispersion_reduced, GrowthObservation, ReducedFormEstimate, DEFAULT_BOOTSTRAP, MIN_UNITS};
pub use sampler::{mcmc_fit, Block, FitConfig, PosteriorDraws, INIT_ATTEMPTS, TARGET_ACCEPTANCE};
pub use summary::{
    dispersion_from_growth_variance, predicted_growth_variance, summarize, DrawLayout, EffectRow, OffspringRow,
    ParameterSummary, PosteriorSummary, TABLE_Q, TABLE_R,
};
