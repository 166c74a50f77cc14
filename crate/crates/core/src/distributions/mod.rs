//! Probability kernels: discretized delays, the negative binomial offspring
//! law, and statistics derived from it.

mod delay;
mod negbin;
mod offspring;

pub use delay::{
    default_lag_cap, discretize_gamma, gamma_cdf, presymptomatic_fraction, serial_interval,
    DelayDistribution, SignedPmf, DEFAULT_TAIL_MASS,
};
pub use negbin::{nb_draw, nb_ln_pmf, nb_logpmf, nb_sample, poisson_draw, poisson_ln_pmf};
pub use offspring::{
    equivalent_dispersion_from_ratio, mixture_equivalent_dispersion, offspring_summary,
    variance_mean_ratio, MixtureDispersion, OffspringSummary,
};
