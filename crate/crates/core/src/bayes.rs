//! Priors and Monte Carlo marginal likelihoods / Bayes factors.
//!
//! Both estimators average prior draws of a density (or density ratio) on the
//! log scale: with `r_j` the per-draw log weight,
//! `log Î = logsumexp(r) − log m`. The standard error is the delta-method
//! approximation `sd(w) / (√m · mean(w))` with `w_j = exp(r_j)`.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::girsanov::{self, DensityEvaluator};
use crate::numeric::{compensated_sum, logsumexp, mean_var};
use crate::rng::{self, streams, Rng};
use crate::sde::{CovariateSet, ModelSpec, SamplePath};

/// Below this effective sample size an estimate is flagged as unreliable.
pub const LOW_ESS: f64 = 10.0;

/// One coordinate of an independent prior.
#[derive(Debug, Clone, PartialEq)]
pub enum Marginal {
    Normal { mean: f64, sd: f64 },
    PointMass(f64),
    Uniform { lo: f64, hi: f64 },
}

impl Marginal {
    fn validate(&self, i: usize) -> Result<()> {
        let ok = match *self {
            Marginal::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
            Marginal::PointMass(v) => v.is_finite(),
            Marginal::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidPrior(format!("component {i}: {self:?}")))
        }
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        match *self {
            Marginal::Normal { mean, sd } => Normal::new(mean, sd).expect("validated").sample(rng),
            Marginal::PointMass(v) => v,
            Marginal::Uniform { lo, hi } if lo == hi => lo,
            Marginal::Uniform { lo, hi } => rng.random_range(lo..hi),
        }
    }

    fn ln_pdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            }
            Marginal::PointMass(v) if x == v => 0.0,
            Marginal::PointMass(_) => f64::NEG_INFINITY,
            Marginal::Uniform { lo, hi } if lo == hi && x == lo => 0.0,
            Marginal::Uniform { lo, hi } if x >= lo && x <= hi && hi > lo => -(hi - lo).ln(),
            Marginal::Uniform { .. } => f64::NEG_INFINITY,
        }
    }
}

/// Distribution over `θ = (β, ξ)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    /// Independent coordinates.
    Independent(Vec<Marginal>),
    /// Finite support with probabilities summing to 1.
    Discrete {
        atoms: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
}

impl Prior {
    /// Independent normals `N(means_i, sds_i²)`.
    pub fn normal(means: &[f64], sds: &[f64]) -> Result<Self> {
        if means.len() != sds.len() {
            return Err(Error::InvalidPrior(format!(
                "{} means but {} standard deviations",
                means.len(),
                sds.len()
            )));
        }
        Self::independent(
            means
                .iter()
                .zip(sds)
                .map(|(&mean, &sd)| Marginal::Normal { mean, sd })
                .collect(),
        )
    }

    pub fn point_mass(theta: &[f64]) -> Result<Self> {
        Self::independent(theta.iter().map(|&v| Marginal::PointMass(v)).collect())
    }

    pub fn independent(marginals: Vec<Marginal>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::InvalidPrior("no components".into()));
        }
        for (i, m) in marginals.iter().enumerate() {
            m.validate(i)?;
        }
        Ok(Prior::Independent(marginals))
    }

    pub fn discrete(atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::InvalidPrior(format!(
                "{} atoms with {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        let d = atoms[0].len();
        if d == 0
            || atoms
                .iter()
                .any(|a| a.len() != d || a.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidPrior(
                "atoms must be finite and share a dimension".into(),
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidPrior("weights must be non-negative".into()));
        }
        let total = compensated_sum(weights.iter().copied());
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidPrior(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(Prior::Discrete { atoms, weights })
    }

    pub fn dim(&self) -> usize {
        match self {
            Prior::Independent(m) => m.len(),
            Prior::Discrete { atoms, .. } => atoms[0].len(),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        match self {
            Prior::Independent(ms) => ms.iter().map(|m| m.sample(rng)).collect(),
            Prior::Discrete { atoms, weights } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (a, w) in atoms.iter().zip(weights) {
                    acc += w;
                    if u < acc {
                        return a.clone();
                    }
                }
                // Rounding left `acc` slightly below 1: take the last atom with
                // positive weight.
                let last = weights
                    .iter()
                    .rposition(|&w| w > 0.0)
                    .unwrap_or(atoms.len() - 1);
                atoms[last].clone()
            }
        }
    }

    /// Log density (independent case, w.r.t. Lebesgue measure on the
    /// non-degenerate coordinates) or log probability (discrete case).
    pub fn ln_pdf(&self, theta: &[f64]) -> f64 {
        if theta.len() != self.dim() {
            return f64::NAN;
        }
        match self {
            Prior::Independent(ms) => ms.iter().zip(theta).map(|(m, &x)| m.ln_pdf(x)).sum(),
            Prior::Discrete { atoms, weights } => {
                let p: f64 = atoms
                    .iter()
                    .zip(weights)
                    .filter(|(a, _)| a.as_slice() == theta)
                    .map(|(_, w)| w)
                    .sum();
                p.ln()
            }
        }
    }

    fn check_dim(&self, model: &ModelSpec) -> Result<()> {
        if self.dim() != model.n_params() {
            return Err(Error::InvalidPrior(format!(
                "prior has dimension {} but the model has {} parameters",
                self.dim(),
                model.n_params()
            )));
        }
        Ok(())
    }
}

/// `m` iid draws, deterministic given `seed`.
pub fn sample_prior(prior: &Prior, seed: u64, m: usize) -> Result<Vec<Vec<f64>>> {
    if m == 0 {
        return Err(Error::InvalidArgument(
            "need at least one prior draw".into(),
        ));
    }
    let mut r = rng::from_seed(seed);
    Ok((0..m).map(|_| prior.sample(&mut r)).collect())
}

/// Monte Carlo estimate of a log marginal likelihood or log Bayes factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogBFEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_draws: usize,
    /// `(Σw)² / Σw²`.
    pub ess: f64,
    /// Mean of the per-draw log weights; `value` is never below it (Jensen).
    pub mean_log_weight: f64,
}

impl LogBFEstimate {
    pub fn low_ess(&self) -> bool {
        self.ess < LOW_ESS
    }
}

/// The estimator applied to precomputed log weights `r_j`.
pub fn estimate_from_log_weights(r: &[f64]) -> Result<LogBFEstimate> {
    let m = r.len();
    if m == 0 {
        return Err(Error::InvalidArgument(
            "need at least one prior draw".into(),
        ));
    }
    if r.iter().any(|x| x.is_nan()) {
        return Err(Error::DegenerateWeights);
    }
    let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateWeights);
    }
    if max == f64::INFINITY {
        return Err(Error::DegenerateWeights);
    }
    let value = logsumexp(r) - (m as f64).ln();
    let w: Vec<f64> = r.iter().map(|x| (x - max).exp()).collect();
    let (w_mean, w_var) = mean_var(&w);
    let std_error = match w_var {
        Some(v) => v.sqrt() / ((m as f64).sqrt() * w_mean),
        None => 0.0,
    };
    let sw = compensated_sum(w.iter().copied());
    let sw2 = compensated_sum(w.iter().map(|x| x * x));
    let ess = (sw * sw / sw2).min(m as f64);
    let finite: Vec<f64> = r.iter().copied().filter(|x| x.is_finite()).collect();
    let mean_log_weight = if finite.len() == m {
        compensated_sum(finite.iter().copied()) / m as f64
    } else {
        f64::NEG_INFINITY
    };
    Ok(LogBFEstimate {
        value,
        std_error,
        n_draws: m,
        ess,
        mean_log_weight,
    })
}

fn check_m(m: usize) -> Result<()> {
    if m == 0 {
        Err(Error::InvalidArgument(
            "need at least one prior draw".into(),
        ))
    } else {
        Ok(())
    }
}

/// Log weights `log f_{θ_j} − offset` for `m` prior draws.
fn log_weights(ev: &DensityEvaluator, prior: &Prior, offset: f64, m: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::from_seed(seed);
    (0..m)
        .map(|_| {
            let theta = prior.sample(&mut r);
            ev.log_density(&theta) - offset
        })
        .collect()
}

/// `log ∫ f_{θ1} / f_{θ0} π(dθ1)` with `θ1` ranging over `family` (its
/// parameter values are ignored, only family, diffusion and mask matter) and
/// `θ0` fixed at `base`.
pub fn log_marginal_ratio_mc(
    path: &SamplePath,
    covs: &CovariateSet,
    family: &ModelSpec,
    prior: &Prior,
    base: &ModelSpec,
    m: usize,
    seed: u64,
) -> Result<LogBFEstimate> {
    check_m(m)?;
    prior.check_dim(family)?;
    if family.diffusion != base.diffusion {
        return Err(Error::DiffusionMismatch);
    }
    let ev = DensityEvaluator::new(family, path, covs)?;
    let same_template = base.drift.family == family.drift.family && base.mask == family.mask;
    let base_ld = if same_template {
        ev.log_density(&base.theta())
    } else {
        girsanov::log_density(base, path, covs)?
    };
    estimate_from_log_weights(&log_weights(&ev, prior, base_ld, m, seed))
}

/// `log ∫ f_θ π(dθ)`, the log marginal likelihood against the null-drift law.
pub fn log_marginal_mc(
    path: &SamplePath,
    covs: &CovariateSet,
    family: &ModelSpec,
    prior: &Prior,
    m: usize,
    seed: u64,
) -> Result<LogBFEstimate> {
    check_m(m)?;
    prior.check_dim(family)?;
    let ev = DensityEvaluator::new(family, path, covs)?;
    estimate_from_log_weights(&log_weights(&ev, prior, 0.0, m, seed))
}

/// Data and candidate for one individual in a system comparison. With a
/// `base` the individual contributes a log Bayes factor against it;
/// otherwise a log marginal likelihood.
#[derive(Debug, Clone, Copy)]
pub struct Individual<'a> {
    pub path: &'a SamplePath,
    pub covs: &'a CovariateSet,
    pub family: &'a ModelSpec,
    pub prior: &'a Prior,
    pub base: Option<&'a ModelSpec>,
}

impl Individual<'_> {
    pub fn estimate(&self, m: usize, seed: u64) -> Result<LogBFEstimate> {
        match self.base {
            Some(base) => {
                log_marginal_ratio_mc(self.path, self.covs, self.family, self.prior, base, m, seed)
            }
            None => log_marginal_mc(self.path, self.covs, self.family, self.prior, m, seed),
        }
    }
}

/// Seed used for individual `i` of a system comparison.
pub fn individual_seed(seed: u64, i: usize) -> u64 {
    rng::derive(seed, streams::INDIVIDUAL + i as u64)
}

/// Log Bayes factor of a system of independent individuals: the sum of the
/// per-individual estimates, each drawn from its own prior stream
/// [`individual_seed`]. Standard errors add in quadrature; `ess` and
/// `n_draws` report the worst individual.
pub fn system_log_bf(individuals: &[Individual<'_>], m: usize, seed: u64) -> Result<LogBFEstimate> {
    if individuals.is_empty() {
        return Err(Error::InvalidArgument("system has no individuals".into()));
    }
    let parts = individuals
        .par_iter()
        .enumerate()
        .map(|(i, ind)| {
            ind.estimate(m, individual_seed(seed, i))
                .map_err(|e| e.for_individual(i))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(combine(&parts))
}

/// Sum of independent estimates.
pub fn combine(parts: &[LogBFEstimate]) -> LogBFEstimate {
    let mut value = 0.0;
    let mut var = 0.0;
    let mut mean_log_weight = 0.0;
    for p in parts {
        value += p.value;
        var += p.std_error * p.std_error;
        mean_log_weight += p.mean_log_weight;
    }
    LogBFEstimate {
        value,
        std_error: var.sqrt(),
        n_draws: parts.iter().map(|p| p.n_draws).min().unwrap_or(0),
        ess: parts.iter().map(|p| p.ess).fold(f64::INFINITY, f64::min),
        mean_log_weight,
    }
}

/// `value / (n T)`.
pub fn normalized_log_bf(est: &LogBFEstimate, n: usize, horizon: f64) -> Result<f64> {
    let scale = n as f64 * horizon;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "n·T must be positive, got {scale}"
        )));
    }
    Ok(est.value / scale)
}
