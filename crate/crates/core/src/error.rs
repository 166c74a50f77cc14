use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("lag cap {l_max} is too small for mean {mean} and sd {sd}; need at least {required}")]
    Truncation {
        mean: f64,
        sd: f64,
        l_max: usize,
        required: usize,
    },

    #[error("non-positive reproduction factor for covariate `{covariate}` (1 + beta * x = {factor})")]
    NonPositiveRate { covariate: String, factor: f64 },

    #[error("covariate `{0}` has zero in-sample standard deviation")]
    DegenerateCovariate(String),

    #[error("missing covariate `{covariate}` for {compartment} on day {day}")]
    MissingCovariate {
        compartment: String,
        day: String,
        covariate: String,
    },

    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),

    #[error("covariate sets differ: {0}")]
    CovariateMismatch(String),

    #[error("unknown age group `{0}`")]
    UnknownAgeGroup(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("{path}: line {line}: {message}")]
    Validation {
        path: String,
        line: u64,
        message: String,
    },

    #[error("missing population for location `{0}`")]
    MissingPopulation(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty covariate group")]
    EmptyGroup,

    #[error("too few units in group `{group}`: {n} (need at least {min})")]
    TooFewUnits { group: String, n: usize, min: usize },

    #[error("variance does not exceed the mean (variance/mean = {0}); no finite dispersion")]
    Underdispersed(f64),

    #[error("no finite starting point after {0} attempts")]
    InitializationFailure(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing climatology for day of year {0}")]
    MissingClimatology(u32),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    /// Input data (as opposed to configuration or numerics) was rejected.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation { .. }
                | Error::UnknownAgeGroup(_)
                | Error::MissingPopulation(_)
                | Error::MissingCovariate { .. }
                | Error::CovariateMismatch(_)
                | Error::DimensionMismatch(_)
                | Error::MissingClimatology(_)
                | Error::TooFewUnits { .. }
                | Error::DegenerateCovariate(_)
        )
    }

    pub fn is_numerical_error(&self) -> bool {
        matches!(
            self,
            Error::InitializationFailure(_) | Error::NonPositiveRate { .. } | Error::Underdispersed(_)
        )
    }
}
