//! Building experiments from a configuration and the replication harness.

use std::time::{Duration, Instant};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::config::{Comparison, CovariateSource, ExperimentConfig, PriorKind};
use super::csv::load_series_csv;
use crate::bayes::{log_marginal_mc, log_marginal_ratio_mc, Marginal, Prior};
use crate::error::{Error, Result};
use crate::numeric::summarize;
use crate::rng::{self, streams};
use crate::sde::{
    benchmark_covariate_sdes, euler_maruyama, simulate_covariates, CovariateSet, DriftSpec,
    ModelSpec, SamplePath, TimeGrid,
};
use crate::selection::{
    enumerate_masks, evaluate_mask, mask_seed, project_xi, sample_wrong_combinations,
    select_system, MleCenteredNormal, PriorBuilder, SystemMember, TruthPointMass, UniformBox,
};

/// Number of benchmark covariates.
pub const BENCHMARK_P: usize = 3;

fn normal(sd: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sd).map_err(|e| Error::Config(e.to_string()))
}

/// Covariates on `grid` per `[covariates]`. The benchmark source draws the
/// four SDE coefficients from `N(0, coef_sd²)` and then simulates.
pub fn build_covariates(
    cfg: &ExperimentConfig,
    grid: &TimeGrid,
    seed: u64,
) -> Result<CovariateSet> {
    let c = &cfg.covariates;
    let covs = match c.source {
        CovariateSource::None => return Ok(CovariateSet::empty(*grid)),
        CovariateSource::Paper => {
            let mut r = rng::stream(seed, 0);
            let d = normal(c.coef_sd)?;
            let coef = [
                d.sample(&mut r),
                d.sample(&mut r),
                d.sample(&mut r),
                d.sample(&mut r),
            ];
            simulate_covariates(&benchmark_covariate_sdes(coef), grid, rng::derive(seed, 1))?
        }
        CovariateSource::Csv => {
            let file = c.path.as_ref().ok_or_else(|| {
                Error::Config("covariates.path is required for csv covariates".into())
            })?;
            let loaded = load_series_csv(file, c.resample)?;
            grid.ensure_same(&loaded.grid, "config grid vs covariate file")?;
            loaded.into_covariates()?
        }
    };
    if c.standardize {
        covs.standardize()
    } else {
        Ok(covs)
    }
}

/// A template with the configured family and diffusion, all `p` covariates
/// included and placeholder parameters.
pub fn model_template(cfg: &ExperimentConfig, p: usize) -> Result<ModelSpec> {
    let family = cfg.drift_family()?;
    let drift = DriftSpec::new(family, vec![0.0; family.arity()])?;
    Ok(ModelSpec::without_covariates(drift, cfg.diffusion()?).with_mask(vec![true; p]))
}

/// True model on `mask`. Unless `[truth] theta` is given, every coefficient
/// of the full model (intercept, `p` covariate coefficients, then `β`) is
/// drawn as `μ + ε` with `μ ~ N(0, mean_sd²)`, `ε ~ N(0, jitter_sd²)`, and
/// coefficients of excluded covariates are dropped.
pub fn draw_truth(
    cfg: &ExperimentConfig,
    template: &ModelSpec,
    mask: &[bool],
    seed: u64,
) -> Result<ModelSpec> {
    let candidate = template.with_mask(mask.to_vec());
    if let Some(theta) = &cfg.truth.theta {
        return candidate
            .with_theta(theta)
            .map_err(|e| Error::Config(format!("truth.theta: {e}")));
    }
    let p = template.mask.len();
    let nb = template.drift.family.arity();
    let mut r = rng::from_seed(seed);
    let mean = normal(cfg.truth.mean_sd)?;
    let jitter = normal(cfg.truth.jitter_sd)?;
    let coefs: Vec<f64> = (0..1 + p + nb)
        .map(|_| mean.sample(&mut r) + jitter.sample(&mut r))
        .collect();
    let full = ModelSpec::new(
        template.drift.clone(),
        template.diffusion.clone(),
        vec![true; p],
        coefs[..1 + p].to_vec(),
    )?;
    let xi = project_xi(&full, mask);
    let beta = coefs[1 + p..].to_vec();
    candidate.with_theta(&beta.into_iter().chain(xi).collect::<Vec<_>>())
}

pub fn prior_builder(cfg: &ExperimentConfig, truth: &ModelSpec) -> Box<dyn PriorBuilder> {
    match cfg.prior.kind {
        PriorKind::MleNormal => Box::new(MleCenteredNormal {
            sd: cfg.prior.sd,
            bound: cfg.prior.bound,
            schedule: cfg.annealing.clone(),
        }),
        PriorKind::PointMassTruth => Box::new(TruthPointMass {
            truth: truth.clone(),
        }),
        PriorKind::Uniform => Box::new(UniformBox {
            bound: cfg.prior.bound,
        }),
    }
}

/// The single-individual experiment: covariates, true model and template.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub grid: TimeGrid,
    pub covs: CovariateSet,
    pub truth: ModelSpec,
    pub template: ModelSpec,
}

impl Experiment {
    pub fn build(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let grid = cfg.time_grid()?;
        let covs = build_covariates(cfg, &grid, rng::derive(seed, streams::COVARIATES))?;
        let template = model_template(cfg, covs.p())?;
        let mask = cfg.true_mask(covs.p())?;
        if mask.len() != covs.p() {
            return Err(Error::Config(format!(
                "model.true_mask has {} entries but there are {} covariates",
                mask.len(),
                covs.p()
            )));
        }
        let truth = draw_truth(cfg, &template, &mask, rng::derive(seed, streams::TRUTH))?;
        Ok(Self {
            grid,
            covs,
            truth,
            template,
        })
    }

    /// A path from the true model.
    pub fn simulate(&self, x0: f64, seed: u64) -> Result<SamplePath> {
        euler_maruyama(&self.truth, &self.covs, x0, &self.grid, seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationEntry {
    pub mask: Vec<bool>,
    /// Mean over replicates of `value / (n T)`.
    pub mean: f64,
    /// Across-replicate standard error; missing for one replicate.
    pub se: Option<f64>,
    pub replicates: usize,
}

#[derive(Debug, Clone)]
pub struct ReplicationReport {
    pub entries: Vec<ReplicationEntry>,
    pub replications: usize,
    pub comparison: Comparison,
    pub truth: ModelSpec,
    /// Console only; never written to output files.
    pub wall_time: Duration,
}

impl ReplicationReport {
    pub fn get(&self, mask: &[bool]) -> Option<&ReplicationEntry> {
        self.entries.iter().find(|e| e.mask == mask)
    }
}

/// Seed of replicate `r`.
pub fn replicate_seed(master: u64, r: usize) -> u64 {
    rng::derive(master, streams::REPLICATE + r as u64)
}

/// For `r = 0..R`: simulate a fresh path from the true model and evaluate
/// every covariate mask (Bayes factor against the truth or marginal
/// likelihood, per `[prior] comparison`), normalized by `T`. Priors are
/// built once from a reference path (seed stream `PATH` of the master seed)
/// unless `refit_per_replicate` is set. Returns per-mask means and
/// across-replicate standard errors.
pub fn run_replications(cfg: &ExperimentConfig) -> Result<ReplicationReport> {
    let start = Instant::now();
    let master = cfg.seeds.master;
    let exp = Experiment::build(cfg, master)?;
    let masks = enumerate_masks(exp.covs.p())?;
    let builder = prior_builder(cfg, &exp.truth);
    let horizon = exp.grid.horizon();
    let base = (cfg.prior.comparison == Comparison::Ratio).then_some(&exp.truth);
    let m = cfg.mc.prior_draws;
    let fixed = if cfg.prior.refit_per_replicate {
        None
    } else {
        let reference = exp.simulate(cfg.model.x0, rng::derive(master, streams::PATH))?;
        let priors = masks
            .par_iter()
            .map(|mask| {
                let candidate = exp.template.with_mask(mask.clone());
                let seed = rng::derive(mask_seed(master, mask), streams::FIT);
                builder
                    .build(&candidate, &reference, &exp.covs, seed)
                    .map(|prior| (candidate, prior))
                    .map_err(|e| e.for_mask(mask))
            })
            .collect::<Result<Vec<_>>>()?;
        Some(priors)
    };
    let per_rep = (0..cfg.mc.replications)
        .into_par_iter()
        .map(|r| {
            let s = replicate_seed(master, r);
            let run = || -> Result<Vec<f64>> {
                let path = exp.simulate(cfg.model.x0, rng::derive(s, streams::PATH))?;
                masks
                    .iter()
                    .enumerate()
                    .map(|(j, mask)| {
                        let est = match &fixed {
                            None => evaluate_mask(
                                &path,
                                &exp.covs,
                                &exp.template,
                                base,
                                mask,
                                builder.as_ref(),
                                m,
                                s,
                            ),
                            Some(priors) => {
                                let (candidate, prior) = &priors[j];
                                let mc_seed = rng::derive(mask_seed(s, mask), streams::PRIOR);
                                match base {
                                    Some(b) => log_marginal_ratio_mc(
                                        &path, &exp.covs, candidate, prior, b, m, mc_seed,
                                    ),
                                    None => log_marginal_mc(
                                        &path, &exp.covs, candidate, prior, m, mc_seed,
                                    ),
                                }
                                .map_err(|e| e.for_mask(mask))
                            }
                        };
                        est.map(|e| e.value / horizon)
                    })
                    .collect()
            };
            run().map_err(|e| e.for_replicate(r))
        })
        .collect::<Result<Vec<_>>>()?;
    let entries = masks
        .iter()
        .enumerate()
        .map(|(j, mask)| {
            let vals: Vec<f64> = per_rep.iter().map(|v| v[j]).collect();
            let s = summarize(&vals);
            ReplicationEntry {
                mask: mask.clone(),
                mean: s.mean,
                se: s.se,
                replicates: s.n,
            }
        })
        .collect();
    Ok(ReplicationReport {
        entries,
        replications: cfg.mc.replications,
        comparison: cfg.prior.comparison,
        truth: exp.truth,
        wall_time: start.elapsed(),
    })
}

/// One individual of a system study.
#[derive(Debug, Clone)]
pub struct StudyIndividual {
    pub covs: CovariateSet,
    pub truth: ModelSpec,
    pub template: ModelSpec,
    pub path: SamplePath,
}

#[derive(Debug, Clone)]
pub struct SystemStudyReport {
    pub individuals: Vec<StudyIndividual>,
    pub true_masks: Vec<Vec<bool>>,
    /// Normalized system value of the true combination.
    pub reference: f64,
    /// Wrong combinations with their normalized system values.
    pub combinations: Vec<(Vec<Vec<bool>>, f64)>,
    pub wall_time: Duration,
}

impl SystemStudyReport {
    /// Every wrong combination scores below 0 (ratio comparison) or below
    /// the true combination (marginal comparison).
    pub fn truth_preferred(&self, comparison: Comparison) -> bool {
        let bar = match comparison {
            Comparison::Ratio => 0.0,
            Comparison::Marginal => self.reference,
        };
        self.combinations.iter().all(|(_, v)| *v < bar)
    }
}

/// `n` individuals with their own covariates, diffusion
/// `σ_i = σ_1 + i · sigma_step`, uniformly drawn true masks and true
/// parameters; each is evaluated on all masks, then `wrong_combinations`
/// random combinations other than the truth are scored by
/// `(1/nT) Σ_i value_i(mask_i)`.
pub fn system_study(cfg: &ExperimentConfig) -> Result<SystemStudyReport> {
    let start = Instant::now();
    let master = cfg.seeds.master;
    let n = cfg.system.individuals;
    let grid = cfg.time_grid()?;
    let base_sigma = cfg.diffusion()?;
    let individuals = (0..n)
        .map(|i| {
            let s = rng::derive(master, streams::INDIVIDUAL + i as u64);
            let build = || -> Result<StudyIndividual> {
                let covs = build_covariates(cfg, &grid, rng::derive(s, streams::COVARIATES))?;
                let mut template = model_template(cfg, covs.p())?;
                template.diffusion.params[0] =
                    base_sigma.params[0] + i as f64 * cfg.system.sigma_step;
                let mut r = rng::stream(s, streams::MASK);
                let mask: Vec<bool> = (0..covs.p()).map(|_| r.random_bool(0.5)).collect();
                let truth = draw_truth(cfg, &template, &mask, rng::derive(s, streams::TRUTH))?;
                let path = euler_maruyama(
                    &truth,
                    &covs,
                    cfg.model.x0,
                    &grid,
                    rng::derive(s, streams::PATH),
                )?;
                Ok(StudyIndividual {
                    covs,
                    truth,
                    template,
                    path,
                })
            };
            build().map_err(|e| e.for_individual(i))
        })
        .collect::<Result<Vec<_>>>()?;
    let p = individuals[0].covs.p();
    let comparison = cfg.prior.comparison;
    let members: Vec<SystemMember<'_>> = individuals
        .iter()
        .map(|ind| SystemMember {
            path: &ind.path,
            covs: &ind.covs,
            template: &ind.template,
            base: (comparison == Comparison::Ratio).then_some(&ind.truth),
            candidates: None,
        })
        .collect();
    // One builder per study: point-mass priors would need per-individual truths.
    if cfg.prior.kind == PriorKind::PointMassTruth {
        return Err(Error::Config(
            "system studies do not support point-mass-truth priors".into(),
        ));
    }
    let builder = prior_builder(cfg, &individuals[0].truth);
    let selection = select_system(&members, builder.as_ref(), cfg.mc.prior_draws, master)?;
    let true_masks: Vec<Vec<bool>> = individuals.iter().map(|i| i.truth.mask.clone()).collect();
    let reference = selection.normalized(&true_masks)?;
    let combos = sample_wrong_combinations(&true_masks, p, cfg.system.wrong_combinations, master)?;
    let combinations = combos
        .into_iter()
        .map(|c| selection.normalized(&c).map(|v| (c, v)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SystemStudyReport {
        individuals,
        true_masks,
        reference,
        combinations,
        wall_time: start.elapsed(),
    })
}

/// The constant-ratio sweep of `[sweep]`: truth `η0` with intercept-only
/// `φ ≡ 1`, prior `η1 ~ U[eta1_lo, eta1_hi]`, `ξ0 = 1` fixed.
pub fn sweep_setup(
    cfg: &ExperimentConfig,
) -> Result<(
    crate::asymptotics::SweepConfig,
    crate::asymptotics::DeltaEstimate,
)> {
    use crate::asymptotics::{delta_inf, DeltaSearch, SweepConfig, DEFAULT_RESOLUTION};
    use crate::sde::DiffusionSpec;
    let s = &cfg.sweep;
    let truth = ModelSpec::without_covariates(
        DriftSpec::constant_ratio(s.eta0),
        DiffusionSpec::constant(s.sigma),
    );
    let prior = Prior::independent(vec![
        Marginal::Uniform {
            lo: s.eta1_lo,
            hi: s.eta1_hi,
        },
        Marginal::PointMass(1.0),
    ])?;
    let delta = delta_inf(
        &DeltaSearch {
            z_bounds: vec![],
            mask0: vec![],
            xi0: vec![1.0],
            eta0: s.eta0,
            mask1: vec![],
            xi1_bounds: vec![(1.0, 1.0)],
            eta1_bounds: (s.eta1_lo, s.eta1_hi),
            resolution: DEFAULT_RESOLUTION,
        },
        cfg.seeds.master,
    )?;
    Ok((
        SweepConfig {
            truth,
            prior,
            horizons: s.horizons.clone(),
            steps_per_unit: s.steps_per_unit,
            replications: s.replications,
            prior_draws: s.prior_draws,
            x0: 0.0,
            delta: delta.delta,
            variance_floor_fraction: s.variance_floor_fraction,
        },
        delta,
    ))
}
