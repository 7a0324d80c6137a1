//! Covariate-subset enumeration, ranking and selection drivers.

use std::cmp::Ordering;

use rand::Rng as _;
use rayon::prelude::*;

use crate::bayes::{self, LogBFEstimate, Prior};
use crate::error::{Error, Result};
use crate::estimation::{fit_mle, AnnealingSchedule};
use crate::rng::{self, streams};
use crate::sde::{CovariateSet, ModelSpec, SamplePath};

pub const MAX_COVARIATES: usize = 20;

/// All `2^p` masks in lexicographic order, first coordinate most significant:
/// `(0,…,0)` first, `(1,…,1)` last.
pub fn enumerate_masks(p: usize) -> Result<Vec<Vec<bool>>> {
    if p > MAX_COVARIATES {
        return Err(Error::InvalidArgument(format!(
            "{p} covariates give 2^{p} masks; at most {MAX_COVARIATES} are supported"
        )));
    }
    Ok((0..1usize << p).map(|i| mask_from_index(i, p)).collect())
}

fn mask_from_index(i: usize, p: usize) -> Vec<bool> {
    (0..p).map(|j| (i >> (p - 1 - j)) & 1 == 1).collect()
}

/// Position of `mask` in [`enumerate_masks`].
pub fn mask_index(mask: &[bool]) -> usize {
    mask.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
}

/// `"101"` style rendering.
pub fn mask_bits(mask: &[bool]) -> String {
    mask.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

pub fn parse_mask(s: &str) -> Result<Vec<bool>> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            _ => Err(Error::InvalidArgument(format!(
                "mask '{s}' must contain only 0 and 1"
            ))),
        })
        .collect()
}

/// Builds the prior used for one candidate mask.
pub trait PriorBuilder: Sync {
    /// `template` carries the candidate's family, diffusion and mask.
    fn build(
        &self,
        template: &ModelSpec,
        path: &SamplePath,
        covs: &CovariateSet,
        seed: u64,
    ) -> Result<Prior>;
}

impl<F> PriorBuilder for F
where
    F: Fn(&ModelSpec, &SamplePath, &CovariateSet, u64) -> Result<Prior> + Sync,
{
    fn build(
        &self,
        template: &ModelSpec,
        path: &SamplePath,
        covs: &CovariateSet,
        seed: u64,
    ) -> Result<Prior> {
        self(template, path, covs, seed)
    }
}

/// Independent normal prior with the simulated-annealing MLE as mean and a
/// common standard deviation. Every parameter is searched in `[−bound, bound]`.
#[derive(Debug, Clone)]
pub struct MleCenteredNormal {
    pub sd: f64,
    pub bound: f64,
    pub schedule: AnnealingSchedule,
}

impl PriorBuilder for MleCenteredNormal {
    fn build(
        &self,
        template: &ModelSpec,
        path: &SamplePath,
        covs: &CovariateSet,
        seed: u64,
    ) -> Result<Prior> {
        let bounds = vec![(-self.bound, self.bound); template.n_params()];
        let fit = fit_mle(template, path, covs, &bounds, &self.schedule, seed)?;
        Prior::normal(&fit.theta_hat, &vec![self.sd; fit.theta_hat.len()])
    }
}

/// Independent `Uniform[−bound, bound]` on every parameter.
#[derive(Debug, Clone, Copy)]
pub struct UniformBox {
    pub bound: f64,
}

impl PriorBuilder for UniformBox {
    fn build(
        &self,
        template: &ModelSpec,
        _: &SamplePath,
        _: &CovariateSet,
        _: u64,
    ) -> Result<Prior> {
        Prior::independent(vec![
            bayes::Marginal::Uniform {
                lo: -self.bound,
                hi: self.bound,
            };
            template.n_params()
        ])
    }
}

/// Point mass at the true parameters projected onto the candidate mask:
/// coefficients of covariates absent from the truth are 0.
#[derive(Debug, Clone)]
pub struct TruthPointMass {
    pub truth: ModelSpec,
}

/// `ξ` of `truth` restated for `mask`.
pub fn project_xi(truth: &ModelSpec, mask: &[bool]) -> Vec<f64> {
    let mut xi = vec![truth.xi[0]];
    let mut j = 1;
    for (l, &on) in truth.mask.iter().enumerate() {
        let coef = if on {
            j += 1;
            truth.xi[j - 1]
        } else {
            0.0
        };
        if mask.get(l).copied().unwrap_or(false) {
            xi.push(coef);
        }
    }
    xi
}

impl PriorBuilder for TruthPointMass {
    fn build(
        &self,
        template: &ModelSpec,
        _: &SamplePath,
        _: &CovariateSet,
        _: u64,
    ) -> Result<Prior> {
        if template.drift.family != self.truth.drift.family
            || template.mask.len() != self.truth.mask.len()
        {
            return Err(Error::InvalidPrior(
                "candidate is not nested in the true model's family".into(),
            ));
        }
        let theta: Vec<f64> = self
            .truth
            .drift
            .beta
            .iter()
            .copied()
            .chain(project_xi(&self.truth, &template.mask))
            .collect();
        Prior::point_mass(&theta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedModel {
    pub mask: Vec<bool>,
    pub estimate: LogBFEstimate,
}

/// Masks sorted by value, best first. Ties go to fewer included covariates,
/// then to the earlier mask in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRanking {
    pub entries: Vec<RankedModel>,
}

fn rank_order(a: &RankedModel, b: &RankedModel) -> Ordering {
    b.estimate
        .value
        .total_cmp(&a.estimate.value)
        .then_with(|| popcount(&a.mask).cmp(&popcount(&b.mask)))
        .then_with(|| a.mask.cmp(&b.mask))
}

fn popcount(m: &[bool]) -> usize {
    m.iter().filter(|&&b| b).count()
}

impl ModelRanking {
    pub fn new(mut entries: Vec<RankedModel>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("nothing to rank".into()));
        }
        entries.sort_by(rank_order);
        Ok(Self { entries })
    }

    pub fn winner(&self) -> &[bool] {
        &self.entries[0].mask
    }

    pub fn get(&self, mask: &[bool]) -> Option<&LogBFEstimate> {
        self.entries
            .iter()
            .find(|e| e.mask == mask)
            .map(|e| &e.estimate)
    }
}

/// Seed for candidate `mask` under `seed`; independent of candidate order.
pub fn mask_seed(seed: u64, mask: &[bool]) -> u64 {
    rng::derive(seed, streams::MASK + mask_index(mask) as u64)
}

/// Estimate for one candidate mask: build its prior (stream `FIT`), then a
/// Monte Carlo marginal likelihood, or a Bayes factor against `base` when
/// given (stream `PRIOR`).
#[allow(clippy::too_many_arguments)]
pub fn evaluate_mask(
    path: &SamplePath,
    covs: &CovariateSet,
    template: &ModelSpec,
    base: Option<&ModelSpec>,
    mask: &[bool],
    builder: &dyn PriorBuilder,
    m: usize,
    seed: u64,
) -> Result<LogBFEstimate> {
    let s = mask_seed(seed, mask);
    let candidate = template.with_mask(mask.to_vec());
    let run = || {
        let prior = builder.build(&candidate, path, covs, rng::derive(s, streams::FIT))?;
        let mc_seed = rng::derive(s, streams::PRIOR);
        match base {
            Some(b) => bayes::log_marginal_ratio_mc(path, covs, &candidate, &prior, b, m, mc_seed),
            None => bayes::log_marginal_mc(path, covs, &candidate, &prior, m, mc_seed),
        }
    };
    run().map_err(|e| e.for_mask(mask))
}

/// Rank `masks` (all `2^p` when `None`) for one individual.
#[allow(clippy::too_many_arguments)]
pub fn rank_masks(
    path: &SamplePath,
    covs: &CovariateSet,
    template: &ModelSpec,
    base: Option<&ModelSpec>,
    masks: Option<&[Vec<bool>]>,
    builder: &dyn PriorBuilder,
    m: usize,
    seed: u64,
) -> Result<ModelRanking> {
    let all;
    let masks = match masks {
        Some(ms) => ms,
        None => {
            all = enumerate_masks(covs.p())?;
            &all
        }
    };
    let entries = masks
        .par_iter()
        .map(|mask| {
            evaluate_mask(path, covs, template, base, mask, builder, m, seed).map(|estimate| {
                RankedModel {
                    mask: mask.clone(),
                    estimate,
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ModelRanking::new(entries)
}

/// Rank all `2^p` covariate subsets of one individual by Monte Carlo
/// marginal likelihood.
pub fn select_single(
    path: &SamplePath,
    covs: &CovariateSet,
    template: &ModelSpec,
    builder: &dyn PriorBuilder,
    m: usize,
    seed: u64,
) -> Result<ModelRanking> {
    rank_masks(path, covs, template, None, None, builder, m, seed)
}

/// One individual in a system selection.
#[derive(Debug, Clone)]
pub struct SystemMember<'a> {
    pub path: &'a SamplePath,
    pub covs: &'a CovariateSet,
    pub template: &'a ModelSpec,
    /// Compare against this model (Bayes factors) instead of reporting
    /// marginal likelihoods.
    pub base: Option<&'a ModelSpec>,
    /// Candidate masks; all `2^p` when `None`.
    pub candidates: Option<Vec<Vec<bool>>>,
}

/// Per-individual rankings of a system. Individual `i` uses seed
/// [`bayes::individual_seed`]`(seed, i)`, so each ranking equals the
/// corresponding single-individual call.
#[derive(Debug, Clone)]
pub struct SystemSelection {
    pub rankings: Vec<ModelRanking>,
    /// `Σ_i T_i` (equals `nT` for a common horizon).
    pub total_time: f64,
}

impl SystemSelection {
    pub fn winners(&self) -> Vec<Vec<bool>> {
        self.rankings.iter().map(|r| r.winner().to_vec()).collect()
    }

    /// `Σ_i value_i(mask_i)` for one mask per individual.
    pub fn log_value(&self, combination: &[Vec<bool>]) -> Result<LogBFEstimate> {
        if combination.len() != self.rankings.len() {
            return Err(Error::Arity(format!(
                "combination has {} masks for {} individuals",
                combination.len(),
                self.rankings.len()
            )));
        }
        let parts = combination
            .iter()
            .zip(&self.rankings)
            .enumerate()
            .map(|(i, (mask, r))| {
                r.get(mask).copied().ok_or_else(|| {
                    Error::InvalidArgument(format!("mask {} was not evaluated", mask_bits(mask)))
                        .for_individual(i)
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(bayes::combine(&parts))
    }

    /// `(1 / nT) Σ_i value_i(mask_i)`.
    pub fn normalized(&self, combination: &[Vec<bool>]) -> Result<f64> {
        Ok(self.log_value(combination)?.value / self.total_time)
    }

    /// Normalized system log Bayes factor of `combination` against `reference`.
    pub fn compare(&self, combination: &[Vec<bool>], reference: &[Vec<bool>]) -> Result<f64> {
        Ok(self.normalized(combination)? - self.normalized(reference)?)
    }
}

/// Rank candidate masks for every individual independently.
pub fn select_system(
    members: &[SystemMember<'_>],
    builder: &dyn PriorBuilder,
    m: usize,
    seed: u64,
) -> Result<SystemSelection> {
    if members.is_empty() {
        return Err(Error::InvalidArgument("system has no individuals".into()));
    }
    let rankings = members
        .iter()
        .enumerate()
        .map(|(i, mem)| {
            rank_masks(
                mem.path,
                mem.covs,
                mem.template,
                mem.base,
                mem.candidates.as_deref(),
                builder,
                m,
                bayes::individual_seed(seed, i),
            )
            .map_err(|e| e.for_individual(i))
        })
        .collect::<Result<Vec<_>>>()?;
    let total_time = members.iter().map(|mem| mem.path.grid().horizon()).sum();
    Ok(SystemSelection {
        rankings,
        total_time,
    })
}

/// `count` distinct combinations (one mask per individual, `p` covariates
/// each) drawn uniformly from all combinations other than `truth`.
pub fn sample_wrong_combinations(
    truth: &[Vec<bool>],
    p: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<Vec<bool>>>> {
    let n = truth.len();
    let bits = n * p;
    if bits >= 63 {
        return Err(Error::InvalidArgument(
            "too many individuals × covariates".into(),
        ));
    }
    let total = 1u64 << bits;
    if count as u64 > total - 1 {
        return Err(Error::InvalidArgument(format!(
            "only {} wrong combinations exist, {count} requested",
            total - 1
        )));
    }
    let encode = |c: &[Vec<bool>]| {
        c.iter()
            .fold(0u64, |acc, m| (acc << p) | mask_index(m) as u64)
    };
    let truth_code = encode(truth);
    let mut r = rng::stream(seed, streams::COMBINATION);
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let code = r.random_range(0..total);
        if code == truth_code || !seen.insert(code) {
            continue;
        }
        let combo = (0..n)
            .map(|i| mask_from_index(((code >> ((n - 1 - i) * p)) & ((1 << p) - 1)) as usize, p))
            .collect();
        out.push(combo);
    }
    Ok(out)
}
