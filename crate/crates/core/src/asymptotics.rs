//! Limit quantities of the large-`T` theory and empirical diagnostics for them.
//!
//! All "limits" are finite-`T` proxies: time averages are left-endpoint grid
//! means, and convergence is only ever assessed by sweeping `T`.
//!
//! Most closed forms here concern the constant-ratio family, where
//! `b_β(t, x) / σ(t, x) ≡ η(β)`, so that with `κ_j = η_j²` and `κ̄ = η0 η1`
//!
//! ```text
//! V_{θj,t} = κ_j ∫ φ_j²,   V_{θ0,θ1,t} = κ̄ ∫ φ0 φ1,
//! K̃′_t = ½ (φ0(t) η0 − φ1(t) η1)².
//! ```

use rand::Rng as _;
use rayon::prelude::*;

use crate::bayes::{self, Prior};
use crate::error::{Error, Result};
use crate::girsanov;
use crate::numeric::{compensated_sum, ols_slope, summarize, Summary};
use crate::rng::{self, streams};
use crate::sde::{euler_maruyama, phi_at, CovariateSet, DriftFamily, ModelSpec, TimeGrid};

/// Time averages of the covariate drift factor: `φ̄^(1) = (1/T)∫φ`,
/// `φ̄^(2) = (1/T)∫φ²` and optionally a cross average `(1/T)∫φ0 φ1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiBar {
    pub phi1: f64,
    pub phi2: f64,
    pub cross: Option<f64>,
}

fn phi_series(xi: &[f64], mask: &[bool], covs: &CovariateSet) -> Result<Vec<f64>> {
    let n = covs.grid().n_steps();
    (0..n).map(|k| phi_at(xi, mask, covs, k)).collect()
}

pub fn phi_bar(xi: &[f64], covs: &CovariateSet, mask: &[bool]) -> Result<PhiBar> {
    let phi = phi_series(xi, mask, covs)?;
    let n = phi.len() as f64;
    Ok(PhiBar {
        phi1: compensated_sum(phi.iter().copied()) / n,
        phi2: compensated_sum(phi.iter().map(|p| p * p)) / n,
        cross: None,
    })
}

/// `(1/T)∫ φ_{ξ0} φ_{ξ1}` for two coefficient vectors with their own masks.
pub fn phi_bar_cross(
    xi0: &[f64],
    mask0: &[bool],
    xi1: &[f64],
    mask1: &[bool],
    covs: &CovariateSet,
) -> Result<f64> {
    let a = phi_series(xi0, mask0, covs)?;
    let b = phi_series(xi1, mask1, covs)?;
    Ok(compensated_sum(a.iter().zip(&b).map(|(x, y)| x * y)) / a.len() as f64)
}

/// `κ0`, `κ1` and `κ̄` for a pair of drift parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KappaSpec {
    Fixed {
        kappa0: f64,
        kappa1: f64,
        kappa_bar: f64,
    },
    /// Constant-ratio family: `κ_j = η_j²`, `κ̄ = η0 η1`.
    ConstantRatio { eta0: f64, eta1: f64 },
}

impl KappaSpec {
    pub fn kappa0(&self) -> f64 {
        match *self {
            KappaSpec::Fixed { kappa0, .. } => kappa0,
            KappaSpec::ConstantRatio { eta0, .. } => eta0 * eta0,
        }
    }

    pub fn kappa1(&self) -> f64 {
        match *self {
            KappaSpec::Fixed { kappa1, .. } => kappa1,
            KappaSpec::ConstantRatio { eta1, .. } => eta1 * eta1,
        }
    }

    pub fn kappa_bar(&self) -> f64 {
        match *self {
            KappaSpec::Fixed { kappa_bar, .. } => kappa_bar,
            KappaSpec::ConstantRatio { eta0, eta1 } => eta0 * eta1,
        }
    }

    /// From two constant-ratio models: `η = β[0]`.
    pub fn from_models(m0: &ModelSpec, m1: &ModelSpec) -> Result<Self> {
        for m in [m0, m1] {
            if m.drift.family != DriftFamily::ConstantRatio {
                return Err(Error::InvalidArgument(format!(
                    "κ is only available in closed form for the constant-ratio family, got {}",
                    m.drift.family
                )));
            }
        }
        Ok(KappaSpec::ConstantRatio {
            eta0: m0.drift.beta[0],
            eta1: m1.drift.beta[0],
        })
    }
}

/// Closed-form KL rate `½(φ0(t_k) η0 − φ1(t_k) η1)²` in the constant-ratio family.
#[allow(clippy::too_many_arguments)]
pub fn kl_rate_special(
    xi0: &[f64],
    mask0: &[bool],
    eta0: f64,
    xi1: &[f64],
    mask1: &[bool],
    eta1: f64,
    covs: &CovariateSet,
    k: usize,
) -> Result<f64> {
    let d = phi_at(xi0, mask0, covs, k)? * eta0 - phi_at(xi1, mask1, covs, k)? * eta1;
    Ok(0.5 * d * d)
}

/// Monte Carlo estimate of `K̃(t_k, t_k + h) / h` with `h = h_steps · dt`:
/// the mean over `replications` paths simulated under `m0` of the interval
/// log density ratio `log f0 − log f1` on steps `k..k + h_steps`.
#[allow(clippy::too_many_arguments)]
pub fn kl_rate_monte_carlo(
    m0: &ModelSpec,
    m1: &ModelSpec,
    covs: &CovariateSet,
    x0: f64,
    k: usize,
    h_steps: usize,
    replications: usize,
    seed: u64,
) -> Result<Summary> {
    let grid = *covs.grid();
    if h_steps == 0 || k + h_steps > grid.n_steps() {
        return Err(Error::IndexOutOfRange {
            index: k + h_steps,
            n_steps: grid.n_steps(),
        });
    }
    if replications == 0 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    let h = h_steps as f64 * grid.dt();
    let vals = (0..replications)
        .into_par_iter()
        .map(|r| {
            let path = euler_maruyama(
                m0,
                covs,
                x0,
                &grid,
                rng::derive(seed, streams::REPLICATE + r as u64),
            )?;
            let s0 = girsanov::interval_stats(m0, None, &path, covs, k..k + h_steps)?;
            let s1 = girsanov::interval_stats(m1, None, &path, covs, k..k + h_steps)?;
            Ok((s0.log_density() - s1.log_density()) / h)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(&vals))
}

/// `K̄^∞ = φ̄^(2)_0 κ0 / 2 − φ̄^(2)_{01} κ̄ + φ̄^(2)_1 κ1 / 2`.
pub fn kl_bar_infinity(phi0: &PhiBar, phi1: &PhiBar, cross: f64, kappa: &KappaSpec) -> Result<f64> {
    let (k0, k1) = (kappa.kappa0(), kappa.kappa1());
    if !(k0 >= 0.0 && k1 >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "κ must be non-negative, got ({k0}, {k1})"
        )));
    }
    Ok(0.5 * phi0.phi2 * k0 - cross * kappa.kappa_bar() + 0.5 * phi1.phi2 * k1)
}

/// `½(√(φ̄^(2)_0 κ0) − √(φ̄^(2)_1 κ1))²`, a lower bound for
/// [`kl_bar_infinity`] whenever `|κ̄| ≤ √(κ0 κ1)`.
pub fn kl_bar_lower_bound(phi0: &PhiBar, phi1: &PhiBar, kappa: &KappaSpec) -> f64 {
    let d = (phi0.phi2 * kappa.kappa0()).sqrt() - (phi1.phi2 * kappa.kappa1()).sqrt();
    0.5 * d * d
}

/// Search space for `δ = inf ½(φ_{ξ0}(z) η0 − φ_{ξ1}(z) η1)²` over
/// `η1`, `ξ1` and linked covariate values `z`, all in boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSearch {
    /// Range of each linked covariate value.
    pub z_bounds: Vec<(f64, f64)>,
    pub mask0: Vec<bool>,
    pub xi0: Vec<f64>,
    pub eta0: f64,
    pub mask1: Vec<bool>,
    /// One box per entry of `ξ1` (intercept first).
    pub xi1_bounds: Vec<(f64, f64)>,
    pub eta1_bounds: (f64, f64),
    /// Grid points per covariate dimension at the first pass.
    pub resolution: usize,
}

pub const DEFAULT_RESOLUTION: usize = 64;
const MAX_GRID_POINTS: usize = 1 << 20;
const MAX_RESOLUTION: usize = 4096;
const REFINE_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaArgmin {
    /// Full covariate vector (coordinates used by neither model are at
    /// their lower bound).
    pub z: Vec<f64>,
    pub xi1: Vec<f64>,
    pub eta1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaEstimate {
    pub delta: f64,
    pub argmin: DeltaArgmin,
    /// Final grid resolution per active covariate dimension (0 when no
    /// covariate enters either model).
    pub grid_resolution: usize,
    /// Whether the grid was too large and random multistart was used.
    pub multistart: bool,
}

fn check_box(b: &[(f64, f64)], what: &str) -> Result<()> {
    for (i, &(lo, hi)) in b.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidArgument(format!(
                "{what} bound {i} is [{lo}, {hi}]; a bounded box is required"
            )));
        }
    }
    Ok(())
}

/// Range of `φ_{ξ1}(z) = ξ·g` over the `ξ1` box, with the minimizing and
/// maximizing coefficient vectors.
fn affine_range(g: &[f64], bounds: &[(f64, f64)]) -> (f64, f64, Vec<f64>, Vec<f64>) {
    let mut lo = 0.0;
    let mut hi = 0.0;
    let mut xlo = Vec::with_capacity(g.len());
    let mut xhi = Vec::with_capacity(g.len());
    for (&gj, &(a, b)) in g.iter().zip(bounds) {
        let (pa, pb) = (a * gj, b * gj);
        if pa <= pb {
            lo += pa;
            hi += pb;
            xlo.push(a);
            xhi.push(b);
        } else {
            lo += pb;
            hi += pa;
            xlo.push(b);
            xhi.push(a);
        }
    }
    (lo, hi, xlo, xhi)
}

fn product_range(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let p = [a.0 * b.0, a.0 * b.1, a.1 * b.0, a.1 * b.1];
    (
        p.iter().copied().fold(f64::INFINITY, f64::min),
        p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    )
}

impl DeltaSearch {
    pub fn validate(&self) -> Result<()> {
        check_box(&self.z_bounds, "covariate")?;
        check_box(&self.xi1_bounds, "ξ1")?;
        check_box(&[self.eta1_bounds], "η1")?;
        let p = self.z_bounds.len();
        if self.mask0.len() != p || self.mask1.len() != p {
            return Err(Error::MaskMismatch {
                mask: self.mask0.len().max(self.mask1.len()),
                covariates: p,
            });
        }
        let k0 = 1 + self.mask0.iter().filter(|&&m| m).count();
        let k1 = 1 + self.mask1.iter().filter(|&&m| m).count();
        if self.xi0.len() != k0 || self.xi1_bounds.len() != k1 {
            return Err(Error::Arity("ξ lengths do not match the masks".into()));
        }
        if self.resolution < 2 {
            return Err(Error::InvalidArgument(
                "resolution must be at least 2".into(),
            ));
        }
        Ok(())
    }

    fn active(&self) -> Vec<usize> {
        (0..self.z_bounds.len())
            .filter(|&l| self.mask0[l] || self.mask1[l])
            .collect()
    }

    fn features(mask: &[bool], z: &[f64]) -> Vec<f64> {
        std::iter::once(1.0)
            .chain(mask.iter().zip(z).filter(|(m, _)| **m).map(|(_, &v)| v))
            .collect()
    }

    /// `δ(z) = ½ dist(φ0(z) η0, {φ1 η1})²` where the set is the interval of
    /// attainable products over the `(ξ1, η1)` box.
    pub fn delta_at(&self, z: &[f64]) -> f64 {
        let target = dot(&self.xi0, &Self::features(&self.mask0, z)) * self.eta0;
        let (lo, hi, _, _) = affine_range(&Self::features(&self.mask1, z), &self.xi1_bounds);
        let (plo, phi) = product_range((lo, hi), self.eta1_bounds);
        let gap = if target < plo {
            plo - target
        } else if target > phi {
            target - phi
        } else {
            0.0
        };
        0.5 * gap * gap
    }

    /// A `(ξ1, η1)` attaining the closest product to the target at `z`.
    fn argmin_at(&self, z: &[f64]) -> DeltaArgmin {
        let target = dot(&self.xi0, &Self::features(&self.mask0, z)) * self.eta0;
        let g = Self::features(&self.mask1, z);
        let (lo, hi, xlo, xhi) = affine_range(&g, &self.xi1_bounds);
        let (elo, ehi) = self.eta1_bounds;
        let (plo, phi) = product_range((lo, hi), (elo, ehi));
        let y = target.clamp(plo, phi);
        // The product is continuous on the rectangle and attains its extremes
        // at corners, so `y` is attained on one of the four edges.
        let mut best = (f64::INFINITY, lo, elo);
        let mut consider = |f: f64, e: f64| {
            let err = (f * e - y).abs();
            if err < best.0 {
                best = (err, f, e);
            }
        };
        for &e in &[elo, ehi] {
            if e != 0.0 {
                consider((y / e).clamp(lo, hi), e);
            } else {
                consider(lo, e);
            }
        }
        for &f in &[lo, hi] {
            if f != 0.0 {
                consider(f, (y / f).clamp(elo, ehi));
            } else {
                consider(f, elo);
            }
        }
        let (_, f, eta1) = best;
        let lambda = if hi > lo { (f - lo) / (hi - lo) } else { 0.0 };
        let xi1 = xlo
            .iter()
            .zip(&xhi)
            .map(|(a, b)| a + lambda * (b - a))
            .collect();
        DeltaArgmin {
            z: z.to_vec(),
            xi1,
            eta1,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn grid_search(search: &DeltaSearch, active: &[usize], res: usize) -> (f64, Vec<f64>) {
    let base: Vec<f64> = search.z_bounds.iter().map(|b| b.0).collect();
    let d = active.len();
    let total = res.pow(d as u32);
    let mut z = base.clone();
    let mut best = (f64::INFINITY, base.clone());
    for idx in 0..total {
        let mut rem = idx;
        for &l in active {
            let i = rem % res;
            rem /= res;
            let (lo, hi) = search.z_bounds[l];
            z[l] = lo + (hi - lo) * i as f64 / (res - 1) as f64;
        }
        let v = search.delta_at(&z);
        if v < best.0 {
            best = (v, z.clone());
        }
    }
    best
}

fn compass(
    search: &DeltaSearch,
    active: &[usize],
    start: (f64, Vec<f64>),
    step0: f64,
) -> (f64, Vec<f64>) {
    let (mut fv, mut z) = start;
    let mut step = step0;
    while step > 1e-10 {
        let mut improved = false;
        for &l in active {
            let (lo, hi) = search.z_bounds[l];
            for dir in [-1.0, 1.0] {
                let mut c = z.clone();
                c[l] = (z[l] + dir * step * (hi - lo)).clamp(lo, hi);
                let v = search.delta_at(&c);
                if v < fv {
                    fv = v;
                    z = c;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (fv, z)
}

/// Grid search over the active covariate dimensions (for each `z` the inner
/// infimum over `(ξ1, η1)` is exact), polished by compass search, with the
/// resolution doubled until successive values differ by less than `1e−4`.
/// Falls back to random multistart when the grid exceeds 2^20 points.
pub fn delta_inf(search: &DeltaSearch, seed: u64) -> Result<DeltaEstimate> {
    search.validate()?;
    let active = search.active();
    let d = active.len();
    let finish = |(delta, z): (f64, Vec<f64>), res: usize, multistart: bool| DeltaEstimate {
        delta,
        argmin: search.argmin_at(&z),
        grid_resolution: res,
        multistart,
    };
    let base: Vec<f64> = search.z_bounds.iter().map(|b| b.0).collect();
    if d == 0 {
        return Ok(finish((search.delta_at(&base), base), 0, false));
    }
    let fits = |res: usize| (res as f64).powi(d as i32) <= MAX_GRID_POINTS as f64;
    if !fits(search.resolution) {
        let mut r = rng::stream(seed, streams::RESTART);
        let mut best = (f64::INFINITY, base.clone());
        for _ in 0..(MAX_GRID_POINTS >> 4) {
            let mut z = base.clone();
            for &l in &active {
                let (lo, hi) = search.z_bounds[l];
                z[l] = if lo == hi {
                    lo
                } else {
                    r.random_range(lo..=hi)
                };
            }
            let v = search.delta_at(&z);
            if v < best.0 {
                best = (v, z);
            }
        }
        let polished = compass(search, &active, best, 0.05);
        return Ok(finish(polished, search.resolution, true));
    }
    let mut res = search.resolution;
    let mut prev = {
        let g = grid_search(search, &active, res);
        compass(search, &active, g, 1.0 / (res - 1) as f64)
    };
    loop {
        let next_res = 2 * res;
        if next_res > MAX_RESOLUTION || !fits(next_res) {
            return Ok(finish(prev, res, false));
        }
        let g = grid_search(search, &active, next_res);
        let cur = compass(search, &active, g, 1.0 / (next_res - 1) as f64);
        res = next_res;
        let change = (cur.0 - prev.0).abs();
        let better = if cur.0 <= prev.0 { cur } else { prev };
        if change < REFINE_TOL {
            return Ok(finish(better, res, false));
        }
        prev = better;
    }
}

/// Running means `(1/n) Σ_{i≤n} δ_i`; the last entry estimates `δ^∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaInfinity {
    pub value: f64,
    pub running_mean: Vec<f64>,
}

pub fn delta_infinity_estimate(deltas: &[f64]) -> Result<DeltaInfinity> {
    if deltas.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one individual".into(),
        ));
    }
    let mut acc = crate::numeric::CompensatedSum::new();
    let running_mean: Vec<f64> = deltas
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            acc.add(d);
            acc.value() / (i + 1) as f64
        })
        .collect();
    Ok(DeltaInfinity {
        value: *running_mean.last().expect("non-empty"),
        running_mean,
    })
}

/// Produces the covariates used on a given grid. The seed is derived from
/// the sweep seed and the horizon index.
pub type CovariateSource<'a> = dyn Fn(&TimeGrid, u64) -> Result<CovariateSet> + Sync + 'a;

/// No covariates at all.
pub fn no_covariates(grid: &TimeGrid, _: u64) -> Result<CovariateSet> {
    Ok(CovariateSet::empty(*grid))
}

/// Settings of a `T`-sweep of `(1/T) log I_T`.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub truth: ModelSpec,
    pub prior: Prior,
    pub horizons: Vec<f64>,
    pub steps_per_unit: usize,
    pub replications: usize,
    pub prior_draws: usize,
    pub x0: f64,
    /// The limit `δ` that `−(1/T) E log I_T` should approach.
    pub delta: f64,
    /// Variance floor as a fraction of the variance at the smallest `T`.
    pub variance_floor_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub horizon: f64,
    pub mean: f64,
    pub se: Option<f64>,
    pub var: Option<f64>,
    pub delta_target: f64,
    /// `|mean + δ|`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// `gap` strictly decreasing along the sweep.
    pub gap_decreasing: bool,
    pub variance_floor: Option<f64>,
    /// Per row: sample variance at or above the floor (`None` when either is missing).
    pub variance_above_floor: Vec<Option<bool>>,
}

/// Seed of replicate `r` at horizon index `j` of a sweep.
pub fn sweep_seed(seed: u64, j: usize, r: usize) -> u64 {
    rng::derive(
        rng::derive(seed, streams::SWEEP + j as u64),
        streams::REPLICATE + r as u64,
    )
}

/// For each `T`, simulate `replications` paths under `truth` and estimate
/// `(1/T) log I_T` with `I_T = ∫ f_{θ1} / f_{θ0} π(dθ1)` over `prior`
/// (parameters of `truth`'s family and mask).
pub fn convergence_sweep(
    config: &SweepConfig,
    covariates: &CovariateSource<'_>,
    seed: u64,
) -> Result<SweepReport> {
    if config.replications == 0 || config.horizons.is_empty() {
        return Err(Error::InvalidArgument(
            "sweep needs horizons and at least one replicate".into(),
        ));
    }
    let mut rows = Vec::with_capacity(config.horizons.len());
    for (j, &horizon) in config.horizons.iter().enumerate() {
        let grid = TimeGrid::with_horizon(horizon, config.steps_per_unit)?;
        let covs = covariates(
            &grid,
            rng::derive(
                rng::derive(seed, streams::SWEEP + j as u64),
                streams::COVARIATES,
            ),
        )?;
        let vals = (0..config.replications)
            .into_par_iter()
            .map(|r| {
                let s = sweep_seed(seed, j, r);
                let run = || {
                    let path = euler_maruyama(
                        &config.truth,
                        &covs,
                        config.x0,
                        &grid,
                        rng::derive(s, streams::PATH),
                    )?;
                    let est = bayes::log_marginal_ratio_mc(
                        &path,
                        &covs,
                        &config.truth,
                        &config.prior,
                        &config.truth,
                        config.prior_draws,
                        rng::derive(s, streams::PRIOR),
                    )?;
                    Ok(est.value / horizon)
                };
                run().map_err(|e: Error| e.for_replicate(r))
            })
            .collect::<Result<Vec<_>>>()?;
        let s = summarize(&vals);
        rows.push(SweepRow {
            horizon,
            mean: s.mean,
            se: s.se,
            var: s.var,
            delta_target: config.delta,
            gap: (s.mean + config.delta).abs(),
        });
    }
    let gap_decreasing = rows.windows(2).all(|w| w[1].gap < w[0].gap);
    let variance_floor = rows[0].var.map(|v| config.variance_floor_fraction * v);
    let variance_above_floor = rows
        .iter()
        .map(|r| match (r.var, variance_floor) {
            (Some(v), Some(f)) => Some(v >= f),
            _ => None,
        })
        .collect();
    Ok(SweepReport {
        rows,
        gap_decreasing,
        variance_floor,
        variance_above_floor,
    })
}

/// Prefix averages of linked covariates across individuals.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignReport {
    /// Prefix sizes `1, 2, 4, …` (largest `≤ n`).
    pub prefix_sizes: Vec<usize>,
    /// `[prefix][l][j]`: `(1/n') Σ_i g_l(z_il(t_j))`.
    pub first_moments: Vec<Vec<Vec<f64>>>,
    /// `[prefix][(l, m) with l ≤ m][j]`: `(1/n') Σ_i g_l g_m`.
    pub second_moments: Vec<Vec<Vec<f64>>>,
    /// RMS over all entries of the change in moments from `n'` to `2n'`.
    pub fluctuation: Vec<(usize, f64)>,
    /// OLS slope of log fluctuation against log `n'`; missing when fewer
    /// than two positive fluctuations exist.
    pub slope: Option<f64>,
}

/// Empirical look at the convergence of cross-individual covariate
/// averages at the grid indices `t_indices`. A diagnostic only.
pub fn covariate_design_check(
    covsets: &[CovariateSet],
    t_indices: &[usize],
) -> Result<DesignReport> {
    let n = covsets.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "need at least two individuals".into(),
        ));
    }
    let p = covsets[0].p();
    for (i, c) in covsets.iter().enumerate() {
        if c.p() != p {
            return Err(Error::MaskMismatch {
                mask: p,
                covariates: c.p(),
            }
            .for_individual(i));
        }
        for &k in t_indices {
            if k > c.grid().n_steps() {
                return Err(Error::IndexOutOfRange {
                    index: k,
                    n_steps: c.grid().n_steps(),
                }
                .for_individual(i));
            }
        }
    }
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|l| (l..p).map(move |m| (l, m))).collect();
    let moments = |size: usize| {
        let first: Vec<Vec<f64>> = (0..p)
            .map(|l| {
                t_indices
                    .iter()
                    .map(|&k| {
                        compensated_sum(covsets[..size].iter().map(|c| c.linked(l, k)))
                            / size as f64
                    })
                    .collect()
            })
            .collect();
        let second: Vec<Vec<f64>> = pairs
            .iter()
            .map(|&(l, m)| {
                t_indices
                    .iter()
                    .map(|&k| {
                        compensated_sum(
                            covsets[..size]
                                .iter()
                                .map(|c| c.linked(l, k) * c.linked(m, k)),
                        ) / size as f64
                    })
                    .collect()
            })
            .collect();
        (first, second)
    };
    let mut prefix_sizes = vec![];
    let mut s = 1;
    while s <= n {
        prefix_sizes.push(s);
        s *= 2;
    }
    let (first_moments, second_moments): (Vec<_>, Vec<_>) =
        prefix_sizes.iter().map(|&s| moments(s)).unzip();
    let flat = |i: usize| -> Vec<f64> {
        first_moments[i]
            .iter()
            .chain(&second_moments[i])
            .flat_map(|v| v.iter().copied())
            .collect()
    };
    let fluctuation: Vec<(usize, f64)> = (0..prefix_sizes.len().saturating_sub(1))
        .map(|i| {
            let (a, b) = (flat(i), flat(i + 1));
            let ms =
                a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64;
            (prefix_sizes[i], ms.sqrt())
        })
        .collect();
    let pts: Vec<(f64, f64)> = fluctuation
        .iter()
        .filter(|(_, f)| *f > 0.0)
        .map(|&(s, f)| ((s as f64).ln(), f.ln()))
        .collect();
    let slope = (pts.len() >= 2 && pts.len() == fluctuation.len()).then(|| {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        ols_slope(&xs, &ys)
    });
    Ok(DesignReport {
        prefix_sizes,
        first_moments,
        second_moments,
        fluctuation,
        slope,
    })
}

/// One statistic of [`uv_time_average_diagnostic`]: replicate mean, its SE,
/// the closed-form target and the gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub mean: f64,
    pub se: Option<f64>,
    pub target: f64,
    pub gap: f64,
}

impl Target {
    fn new(vals: &[f64], target: f64) -> Self {
        let s = summarize(vals);
        Self {
            mean: s.mean,
            se: s.se,
            target,
            gap: (s.mean - target).abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UvRow {
    pub horizon: f64,
    /// `V_{θ1}/T` against `φ̄^(2)_1 κ1`.
    pub v1: Target,
    /// `V_{θ0,θ1}/T` against `φ̄^(2)_{01} κ̄`.
    pub cross_v: Target,
    /// `U_{θ1}/T` against `φ̄^(2)_{01} κ̄`.
    pub u1: Target,
}

/// Replicate means of `V/T`, `V_{0,1}/T` and `U/T` under `m0`, against
/// their constant-ratio closed forms computed on the same covariates.
#[allow(clippy::too_many_arguments)]
pub fn uv_time_average_diagnostic(
    m0: &ModelSpec,
    m1: &ModelSpec,
    covariates: &CovariateSource<'_>,
    horizons: &[f64],
    steps_per_unit: usize,
    replications: usize,
    x0: f64,
    seed: u64,
) -> Result<Vec<UvRow>> {
    let kappa = KappaSpec::from_models(m0, m1)?;
    if replications == 0 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    horizons
        .iter()
        .enumerate()
        .map(|(j, &horizon)| {
            let grid = TimeGrid::with_horizon(horizon, steps_per_unit)?;
            let covs = covariates(
                &grid,
                rng::derive(
                    rng::derive(seed, streams::SWEEP + j as u64),
                    streams::COVARIATES,
                ),
            )?;
            let p1 = phi_bar(&m1.xi, &covs, &m1.mask)?;
            let cross = phi_bar_cross(&m0.xi, &m0.mask, &m1.xi, &m1.mask, &covs)?;
            let stats = (0..replications)
                .into_par_iter()
                .map(|r| {
                    let path = euler_maruyama(
                        m0,
                        &covs,
                        x0,
                        &grid,
                        rng::derive(sweep_seed(seed, j, r), streams::PATH),
                    )?;
                    let s = girsanov::girsanov_stats(m1, Some(m0), &path, &covs)?;
                    Ok((
                        s.v / horizon,
                        s.cross_v.expect("requested") / horizon,
                        s.u / horizon,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let v: Vec<f64> = stats.iter().map(|s| s.0).collect();
            let c: Vec<f64> = stats.iter().map(|s| s.1).collect();
            let u: Vec<f64> = stats.iter().map(|s| s.2).collect();
            Ok(UvRow {
                horizon,
                v1: Target::new(&v, p1.phi2 * kappa.kappa1()),
                cross_v: Target::new(&c, cross * kappa.kappa_bar()),
                u1: Target::new(&u, cross * kappa.kappa_bar()),
            })
        })
        .collect()
}
