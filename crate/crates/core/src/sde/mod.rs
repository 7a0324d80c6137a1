//! Time grids, paths, covariates, model specifications and Euler–Maruyama
//! simulation.

mod covariates;
mod grid;
mod model;
mod simulate;

pub use covariates::{CovariateSet, Link};
pub use grid::{SamplePath, TimeGrid};
pub use model::{
    phi_at, phi_eval, DiffusionFamily, DiffusionSpec, DriftFamily, DriftSpec, ModelSpec,
};
pub use simulate::{benchmark_covariate_sdes, euler_maruyama, simulate_covariates, CovariateSde};
