use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("grid index {index} out of range (n_steps = {n_steps})")]
    IndexOutOfRange { index: usize, n_steps: usize },

    #[error("link function for covariate {covariate} undefined at value {value}")]
    LinkUndefined { covariate: usize, value: f64 },

    #[error("covariate {index} has zero empirical variance and cannot be standardized")]
    DegenerateCovariate { index: usize },

    #[error("parameter arity mismatch: {0}")]
    Arity(String),

    #[error("mask has {mask} entries but the covariate set has {covariates} series")]
    MaskMismatch { mask: usize, covariates: usize },

    #[error("non-finite value encountered at step {step}")]
    NonFinite { step: usize },

    #[error("diffusion coefficient {value} below floor at step {step}")]
    DiffusionFloor { step: usize, value: f64 },

    #[error("models use different diffusion specifications")]
    DiffusionMismatch,

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("all importance weights are -inf or NaN; prior support is degenerate")]
    DegenerateWeights,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("objective is non-finite at every one of {attempts} sampled starting points")]
    NonFiniteObjective { attempts: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("individual {index}: {source}")]
    Individual {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("mask {mask}: {source}")]
    Mask {
        mask: String,
        #[source]
        source: Box<Error>,
    },

    #[error("replicate {index}: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {message}")]
    Csv { path: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn for_individual(self, index: usize) -> Self {
        Error::Individual {
            index,
            source: Box::new(self),
        }
    }

    pub fn for_mask(self, mask: &[bool]) -> Self {
        Error::Mask {
            mask: crate::selection::mask_bits(mask),
            source: Box::new(self),
        }
    }

    pub fn for_replicate(self, index: usize) -> Self {
        Error::Replicate {
            index,
            source: Box::new(self),
        }
    }

    /// True for errors caused by the user's configuration or input files
    /// rather than by a numerical failure during a run.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::MissingFile(_))
    }
}
