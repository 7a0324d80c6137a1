#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Bayes-factor model and covariate selection for stochastic differential
//! equations with time-dependent covariates.
//!
//! The model for one individual is
//!
//! ```text
//! dX(t) = φ_ξ(t) b_β(t, X(t)) dt + σ(t, X(t)) dW(t),
//! φ_ξ(t) = ξ0 + Σ_l ξ_l g_l(z_l(t)),
//! ```
//!
//! observed on a uniform grid. Likelihoods are discretized Girsanov densities
//! against the null-drift law, marginal likelihoods and Bayes factors are
//! prior-draw Monte Carlo integrals, and [`asymptotics`] provides numerical
//! diagnostics for the large-`T` behaviour of normalized log Bayes factors.

pub mod asymptotics;
pub mod bayes;
pub mod error;
pub mod estimation;
pub mod girsanov;
pub mod io;
pub mod numeric;
pub mod rng;
pub mod sde;
pub mod selection;

pub use error::{Error, Result};
