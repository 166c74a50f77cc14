//! Simulation and Bayesian inference for compartmentalized epidemic counts
//! under overdispersed, individual-level transmission.

pub mod distributions;
pub mod effects;
pub mod error;
pub mod features;
pub mod inference;
pub mod model;
pub mod renewal;
pub mod rng;
pub mod synthetic;

pub use distributions::{DelayDistribution, OffspringSummary};
pub use effects::{CovariateKind, CovariatePanel, CovariateSpec, EffectSet};
pub use error::{Error, Result};
pub use features::{CaseRecord, Panel};
pub use inference::{FitConfig, PosteriorDraws, PriorConfig};
pub use model::{AgeGroup, CompartmentKey, LatentInfections, ModelParams, Populations, SEED_DAYS};
pub use renewal::{SimulatedPanel, Variant};
