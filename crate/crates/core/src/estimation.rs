//! Simulated annealing, maximum likelihood fits and BIC.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::girsanov::{self, DensityEvaluator};
use crate::numeric::CompensatedSum;
use crate::rng::{self, streams, Rng};
use crate::sde::{CovariateSet, DiffusionSpec, DriftFamily, DriftSpec, ModelSpec, SamplePath};

/// Attempts at drawing a starting point with a finite objective.
pub const MAX_START_ATTEMPTS: usize = 100;

/// Geometric cooling schedule.
///
/// `proposal_scale` holds per-coordinate proposal standard deviations as
/// fractions of the box width; an empty vector means 5% everywhere. The
/// effective scale shrinks in proportion to `temp / t_initial`. When
/// `t_initial == t_min` the run is greedy: one level of `steps_per_temp`
/// proposals, accepting only non-worsening moves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnealingSchedule {
    pub t_initial: f64,
    pub cooling: f64,
    pub steps_per_temp: usize,
    pub t_min: f64,
    pub proposal_scale: Vec<f64>,
    pub restarts: usize,
}

impl Default for AnnealingSchedule {
    fn default() -> Self {
        Self {
            t_initial: 1.0,
            cooling: 0.95,
            steps_per_temp: 50,
            t_min: 1e-4,
            proposal_scale: Vec::new(),
            restarts: 4,
        }
    }
}

impl AnnealingSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("annealing schedule: {m}")));
        if !(self.t_initial > 0.0 && self.t_initial.is_finite()) {
            return bad("t_initial must be positive");
        }
        if !(self.t_min > 0.0 && self.t_min <= self.t_initial) {
            return bad("t_min must be positive and at most t_initial");
        }
        if !(self.cooling > 0.0 && self.cooling < 1.0) {
            return bad("cooling must lie in (0, 1)");
        }
        if self.steps_per_temp == 0 || self.restarts == 0 {
            return bad("steps_per_temp and restarts must be at least 1");
        }
        if self
            .proposal_scale
            .iter()
            .any(|s| !(*s > 0.0 && s.is_finite()))
        {
            return bad("proposal scales must be positive");
        }
        Ok(())
    }

    fn is_greedy(&self) -> bool {
        self.t_initial == self.t_min
    }
}

/// Best point found and its objective value.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub x: Vec<f64>,
    pub value: f64,
}

fn check_bounds(bounds: &[(f64, f64)]) -> Result<()> {
    if bounds.is_empty() {
        return Err(Error::InvalidArgument("empty parameter box".into()));
    }
    for (i, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidArgument(format!("bound {i} is [{lo}, {hi}]")));
        }
    }
    Ok(())
}

/// Reflect `x` into `[lo, hi]`.
fn reflect(mut x: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    if w == 0.0 {
        return lo;
    }
    if x < lo || x > hi {
        // Fold onto a period of length 2w.
        let mut y = (x - lo).rem_euclid(2.0 * w);
        if y > w {
            y = 2.0 * w - y;
        }
        x = lo + y;
    }
    x.clamp(lo, hi)
}

fn uniform_point(bounds: &[(f64, f64)], rng: &mut Rng) -> Vec<f64> {
    bounds
        .iter()
        .map(|&(lo, hi)| {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..=hi)
            }
        })
        .collect()
}

fn anneal_once<F>(
    objective: &F,
    bounds: &[(f64, f64)],
    schedule: &AnnealingSchedule,
    seed: u64,
) -> Result<Optimum>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let mut rng = rng::from_seed(seed);
    let mut start = None;
    for _ in 0..MAX_START_ATTEMPTS {
        let x = uniform_point(bounds, &mut rng);
        let f = objective(&x);
        if f.is_finite() {
            start = Some((x, f));
            break;
        }
    }
    let (mut x, mut fx) = start.ok_or(Error::NonFiniteObjective {
        attempts: MAX_START_ATTEMPTS,
    })?;
    let mut best = Optimum {
        x: x.clone(),
        value: fx,
    };
    let scale: Vec<f64> = bounds
        .iter()
        .enumerate()
        .map(|(i, &(lo, hi))| schedule.proposal_scale.get(i).copied().unwrap_or(0.05) * (hi - lo))
        .collect();
    let greedy = schedule.is_greedy();
    let mut temp = schedule.t_initial;
    let mut cand = x.clone();
    loop {
        let shrink = temp / schedule.t_initial;
        for _ in 0..schedule.steps_per_temp {
            for i in 0..cand.len() {
                let (lo, hi) = bounds[i];
                let eps: f64 = rng.sample(StandardNormal);
                cand[i] = reflect(x[i] + scale[i] * shrink * eps, lo, hi);
            }
            let fc = objective(&cand);
            if !fc.is_finite() {
                continue;
            }
            let accept = if fc <= fx {
                true
            } else if greedy {
                false
            } else {
                rng.random::<f64>() < (-(fc - fx) / temp).exp()
            };
            if accept {
                x.copy_from_slice(&cand);
                fx = fc;
                if fx < best.value {
                    best.x.copy_from_slice(&x);
                    best.value = fx;
                }
            }
        }
        if greedy {
            break;
        }
        temp *= schedule.cooling;
        if temp < schedule.t_min {
            break;
        }
    }
    Ok(best)
}

/// Minimize `objective` over the box `bounds` by simulated annealing with
/// `schedule.restarts` independent restarts (restart `r` uses stream
/// `RESTART + r` of `seed`). Returns the best point ever visited; ties go to
/// the lowest restart index.
pub fn simulated_annealing<F>(
    objective: &F,
    bounds: &[(f64, f64)],
    schedule: &AnnealingSchedule,
    seed: u64,
) -> Result<Optimum>
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    schedule.validate()?;
    check_bounds(bounds)?;
    let runs = (0..schedule.restarts)
        .into_par_iter()
        .map(|r| {
            anneal_once(
                objective,
                bounds,
                schedule,
                rng::derive(seed, streams::RESTART + r as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<Optimum> = None;
    for run in runs {
        if best.as_ref().is_none_or(|b| run.value < b.value) {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

/// `2 nll + k ln n_obs`.
pub fn bic(neg_loglik: f64, k: usize, n_obs: usize) -> f64 {
    2.0 * neg_loglik + k as f64 * (n_obs as f64).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub family: DriftFamily,
    pub theta_hat: Vec<f64>,
    pub neg_loglik: f64,
    pub bic: f64,
    pub n_obs: usize,
    /// Number of free parameters (non-degenerate bounds).
    pub k: usize,
}

impl FitResult {
    fn new(
        family: DriftFamily,
        theta_hat: Vec<f64>,
        neg_loglik: f64,
        bounds: &[(f64, f64)],
        n_obs: usize,
    ) -> Self {
        let k = bounds.iter().filter(|(lo, hi)| hi > lo).count();
        Self {
            family,
            theta_hat,
            neg_loglik,
            bic: bic(neg_loglik, k, n_obs),
            n_obs,
            k,
        }
    }
}

/// `−(U − V/2)`.
pub fn neg_loglik(model: &ModelSpec, path: &SamplePath, covs: &CovariateSet) -> Result<f64> {
    Ok(-girsanov::log_density(model, path, covs)?)
}

/// Maximum likelihood over `θ = (β, ξ)` of `template`'s family, diffusion and
/// mask, within `bounds` (one pair per parameter).
pub fn fit_mle(
    template: &ModelSpec,
    path: &SamplePath,
    covs: &CovariateSet,
    bounds: &[(f64, f64)],
    schedule: &AnnealingSchedule,
    seed: u64,
) -> Result<FitResult> {
    if bounds.len() != template.n_params() {
        return Err(Error::Arity(format!(
            "{} bounds for a model with {} parameters",
            bounds.len(),
            template.n_params()
        )));
    }
    let ev = DensityEvaluator::new(template, path, covs)?;
    let objective = |theta: &[f64]| -ev.log_density(theta);
    let opt = simulated_annealing(&objective, bounds, schedule, seed)?;
    Ok(FitResult::new(
        template.drift.family,
        opt.x,
        opt.value,
        bounds,
        path.grid().n_steps(),
    ))
}

/// Weighted sums of the CKLS Euler quasi-likelihood for a fixed `θ4`:
/// with `w_k = X_k^{−2θ4}` and `y_k = ΔX_k / dt`,
/// `Σw, Σw x, Σw x², Σw y, Σw x y, Σw y²` and `Σ ln X_k`.
#[derive(Debug, Clone, Copy)]
struct CklsSums {
    theta4: f64,
    w: f64,
    wx: f64,
    wxx: f64,
    wy: f64,
    wxy: f64,
    wyy: f64,
}

struct CklsData<'a> {
    x: &'a [f64],
    ln_x: Vec<f64>,
    sum_ln_x: f64,
    dt: f64,
    n: usize,
}

impl<'a> CklsData<'a> {
    fn new(path: &'a SamplePath, needs_positive: bool) -> Result<Self> {
        let xs = path.values();
        let n = path.grid().n_steps();
        if xs.windows(2).all(|w| w[0] == w[1]) {
            return Err(Error::DegenerateData("constant path".into()));
        }
        if needs_positive {
            if let Some(k) = xs[..n].iter().position(|&x| x <= 0.0) {
                return Err(Error::DegenerateData(format!(
                    "path value {} at index {k} is not positive; the power diffusion is undefined",
                    xs[k]
                )));
            }
        }
        let ln_x: Vec<f64> = xs[..n]
            .iter()
            .map(|&x| if x > 0.0 { x.ln() } else { 0.0 })
            .collect();
        let sum_ln_x = ln_x.iter().copied().collect::<CompensatedSum>().value();
        Ok(Self {
            x: xs,
            ln_x,
            sum_ln_x,
            dt: path.grid().dt(),
            n,
        })
    }

    fn sums(&self, theta4: f64) -> CklsSums {
        // Plain sums inside short blocks, compensated across blocks.
        const BLOCK: usize = 64;
        let mut s = [CompensatedSum::new(); 6];
        let mut k = 0;
        while k < self.n {
            let end = (k + BLOCK).min(self.n);
            let mut b = [0.0; 6];
            for j in k..end {
                let x = self.x[j];
                let y = (self.x[j + 1] - x) / self.dt;
                let w = if theta4 == 0.0 {
                    1.0
                } else {
                    (-2.0 * theta4 * self.ln_x[j]).exp()
                };
                let wx = w * x;
                b[0] += w;
                b[1] += wx;
                b[2] += wx * x;
                b[3] += w * y;
                b[4] += wx * y;
                b[5] += w * y * y;
            }
            for (acc, v) in s.iter_mut().zip(b) {
                acc.add(v);
            }
            k = end;
        }
        CklsSums {
            theta4,
            w: s[0].value(),
            wx: s[1].value(),
            wxx: s[2].value(),
            wy: s[3].value(),
            wxy: s[4].value(),
            wyy: s[5].value(),
        }
    }

    /// Negative Euler quasi-log-likelihood.
    fn nll(&self, s: &CklsSums, t1: f64, t2: f64, t3: f64) -> f64 {
        // Σ w (y − t1 − t2 x)²
        let rss = s.wyy - 2.0 * t1 * s.wy - 2.0 * t2 * s.wxy
            + t1 * t1 * s.w
            + 2.0 * t1 * t2 * s.wx
            + t2 * t2 * s.wxx;
        let n = self.n as f64;
        let var0 = t3 * t3 * self.dt;
        0.5 * n * (2.0 * std::f64::consts::PI * var0).ln()
            + s.theta4 * self.sum_ln_x
            + rss.max(0.0) * self.dt * self.dt / (2.0 * var0)
    }
}

/// Minimize `a t1² + 2 b t1 t2 + c t2² − 2 d t1 − 2 e t2` over a box; exact.
fn box_wls(a: f64, b: f64, c: f64, d: f64, e: f64, b1: (f64, f64), b2: (f64, f64)) -> (f64, f64) {
    let q = |t1: f64, t2: f64| {
        a * t1 * t1 + 2.0 * b * t1 * t2 + c * t2 * t2 - 2.0 * d * t1 - 2.0 * e * t2
    };
    let mut cands: Vec<(f64, f64)> = Vec::with_capacity(9);
    let det = a * c - b * b;
    if det > 0.0 {
        let t1 = (c * d - b * e) / det;
        let t2 = (a * e - b * d) / det;
        if t1 >= b1.0 && t1 <= b1.1 && t2 >= b2.0 && t2 <= b2.1 {
            return (t1, t2);
        }
    }
    // Edges: one coordinate fixed at a bound, the other minimized and clamped.
    for &t1 in &[b1.0, b1.1] {
        let t2 = if c > 0.0 {
            ((e - b * t1) / c).clamp(b2.0, b2.1)
        } else {
            b2.0
        };
        cands.push((t1, t2));
    }
    for &t2 in &[b2.0, b2.1] {
        let t1 = if a > 0.0 {
            ((d - b * t2) / a).clamp(b1.0, b1.1)
        } else {
            b1.0
        };
        cands.push((t1, t2));
    }
    let mut best = cands[0];
    for &cand in &cands[1..] {
        if q(cand.0, cand.1) < q(best.0, best.1) {
            best = cand;
        }
    }
    best
}

/// CKLS fit of `dX = (θ1 + θ2 X) dt + θ3 X^θ4 dW` by the Euler
/// quasi-likelihood.
///
/// All four parameters are first estimated by simulated annealing. The
/// diffusion parameters `(θ3, θ4)` are then frozen and `(θ1, θ2)` refit by
/// exact box-constrained weighted least squares, which is the drift MLE for a
/// known diffusion. Setting a degenerate bound fixes a parameter (e.g.
/// `θ2 = θ4 = 0` for Brownian motion with drift); `k` counts free parameters.
pub fn fit_ckls(
    path: &SamplePath,
    bounds: &[(f64, f64); 4],
    schedule: &AnnealingSchedule,
    seed: u64,
) -> Result<FitResult> {
    check_bounds(bounds)?;
    if bounds[2].0 <= 0.0 {
        return Err(Error::InvalidArgument("θ3 bounds must be positive".into()));
    }
    let fractional = !(bounds[3].0 == 0.0 && bounds[3].1 == 0.0);
    let data = CklsData::new(path, fractional)?;
    let cache = std::sync::Mutex::new(None::<CklsSums>);
    let sums_for = |t4: f64| -> CklsSums {
        if let Some(s) = *cache.lock().expect("cache lock") {
            if s.theta4 == t4 {
                return s;
            }
        }
        let s = data.sums(t4);
        *cache.lock().expect("cache lock") = Some(s);
        s
    };
    let objective = |th: &[f64]| {
        let s = sums_for(th[3]);
        data.nll(&s, th[0], th[1], th[2])
    };
    let opt = simulated_annealing(&objective, bounds, schedule, seed)?;
    let (t3, t4) = (opt.x[2], opt.x[3]);
    let s = data.sums(t4);
    let (t1, t2) = box_wls(s.w, s.wx, s.wxx, s.wy, s.wxy, bounds[0], bounds[1]);
    let (t1, t2, nll) = {
        let refit = data.nll(&s, t1, t2, t3);
        if refit <= opt.value {
            (t1, t2, refit)
        } else {
            (opt.x[0], opt.x[1], opt.value)
        }
    };
    Ok(FitResult::new(
        DriftFamily::Ckls,
        vec![t1, t2, t3, t4],
        nll,
        bounds,
        data.n,
    ))
}

/// The CKLS model with parameters `θ = (θ1, θ2, θ3, θ4)` as a [`ModelSpec`].
pub fn ckls_model(theta: [f64; 4]) -> ModelSpec {
    ModelSpec::without_covariates(
        DriftSpec {
            family: DriftFamily::Ckls,
            beta: vec![theta[0], theta[1]],
        },
        DiffusionSpec::ckls(theta[2], theta[3]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{euler_maruyama, TimeGrid};

    #[test]
    fn convex_recovery() {
        let f = |x: &[f64]| (x[0] - 2.0).powi(2);
        let opt =
            simulated_annealing(&f, &[(-10.0, 10.0)], &AnnealingSchedule::default(), 1).unwrap();
        assert!((opt.x[0] - 2.0).abs() < 1e-2);
    }

    #[test]
    fn deterministic_given_seed() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + (x[1] + 0.5).powi(2) + (3.0 * x[0]).sin();
        let b = [(-3.0, 3.0), (-3.0, 3.0)];
        let s = AnnealingSchedule::default();
        assert_eq!(
            simulated_annealing(&f, &b, &s, 9).unwrap(),
            simulated_annealing(&f, &b, &s, 9).unwrap()
        );
    }

    #[test]
    fn greedy_never_worsens() {
        let s = AnnealingSchedule {
            t_initial: 1e-3,
            t_min: 1e-3,
            ..Default::default()
        };
        let f = |x: &[f64]| x[0].abs() + (5.0 * x[0]).cos();
        for seed in 0..20 {
            let mut r = rng::from_seed(rng::derive(seed, streams::RESTART));
            let start = uniform_point(&[(-4.0, 4.0)], &mut r);
            let opt = simulated_annealing(
                &f,
                &[(-4.0, 4.0)],
                &AnnealingSchedule {
                    restarts: 1,
                    ..s.clone()
                },
                seed,
            )
            .unwrap();
            assert!(opt.value <= f(&start));
        }
    }

    #[test]
    fn best_ever_bookkeeping() {
        let visited = std::sync::Mutex::new(f64::INFINITY);
        let f = |x: &[f64]| {
            let v = (x[0] * 3.0).sin() + 0.1 * x[0] * x[0];
            let mut m = visited.lock().unwrap();
            *m = m.min(v);
            v
        };
        let opt =
            simulated_annealing(&f, &[(-5.0, 5.0)], &AnnealingSchedule::default(), 4).unwrap();
        assert_eq!(opt.value, *visited.lock().unwrap());
    }

    #[test]
    fn degenerate_box_returns_boxed_point() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let opt = simulated_annealing(
            &f,
            &[(1.5, 1.5), (-2.0, -2.0)],
            &AnnealingSchedule::default(),
            0,
        )
        .unwrap();
        assert_eq!(opt.x, vec![1.5, -2.0]);
    }

    #[test]
    fn non_finite_objective_errors() {
        let f = |_: &[f64]| f64::NAN;
        let err =
            simulated_annealing(&f, &[(0.0, 1.0)], &AnnealingSchedule::default(), 0).unwrap_err();
        assert!(matches!(err, Error::NonFiniteObjective { attempts: 100 }));
    }

    #[test]
    fn invalid_schedules() {
        let base = AnnealingSchedule::default();
        for s in [
            AnnealingSchedule {
                cooling: 1.0,
                ..base.clone()
            },
            AnnealingSchedule {
                t_min: 2.0,
                ..base.clone()
            },
            AnnealingSchedule {
                restarts: 0,
                ..base.clone()
            },
            AnnealingSchedule {
                proposal_scale: vec![0.0],
                ..base.clone()
            },
        ] {
            assert!(s.validate().is_err());
        }
    }

    #[test]
    fn reflection_stays_inside() {
        for x in [-7.3, -1.0, 0.0, 0.5, 1.0, 2.2, 13.9] {
            let y = reflect(x, 0.0, 1.0);
            assert!((0.0..=1.0).contains(&y));
        }
        assert!((reflect(1.25, 0.0, 1.0) - 0.75).abs() < 1e-15);
        assert!((reflect(-0.25, 0.0, 1.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn bic_arithmetic() {
        assert_eq!(bic(10.0, 0, 50), 20.0);
        assert!((bic(100.0, 3, 500) - 218.643_824_295).abs() < 1e-6);
    }

    #[test]
    fn neg_loglik_matches_oracle() {
        let g = TimeGrid::new(0.0, 5.0, 500).unwrap();
        let c = CovariateSet::empty(g);
        let m = ModelSpec::without_covariates(
            DriftSpec::linear_affine(0.3, -0.7),
            DiffusionSpec::constant(0.8),
        );
        let p = euler_maruyama(&m, &c, 1.0, &g, 3).unwrap();
        let o = girsanov::gaussian_transition_oracle(&m, &p, &c).unwrap();
        assert!((neg_loglik(&m, &p, &c).unwrap() + o).abs() < 1e-9);
        let null = m.with_theta(&[0.3, -0.7, 0.0]).unwrap();
        assert_eq!(neg_loglik(&null, &p, &c).unwrap(), 0.0);
    }

    #[test]
    fn neg_loglik_increases_away_from_optimum() {
        // For b = β x the likelihood is quadratic in β with maximizer U1/V1.
        let g = TimeGrid::new(0.0, 20.0, 2000).unwrap();
        let c = CovariateSet::empty(g);
        let m = ModelSpec::without_covariates(
            DriftSpec::linear_affine(0.0, -1.0),
            DiffusionSpec::constant(1.0),
        );
        let p = euler_maruyama(&m, &c, 1.0, &g, 8).unwrap();
        let unit = m.with_theta(&[0.0, 1.0, 1.0]).unwrap();
        let beta = girsanov::ito_u(&unit, &p, &c).unwrap()
            / girsanov::quadrature_v(&unit, &p, &c).unwrap();
        let at = |b: f64| neg_loglik(&m.with_theta(&[0.0, b, 1.0]).unwrap(), &p, &c).unwrap();
        for eps in [1e-3, 1e-2, 0.1] {
            assert!(at(beta + eps) > at(beta));
            assert!(at(beta - eps) > at(beta));
        }
    }

    #[test]
    fn fit_mle_recovers_scalar_beta() {
        let g = TimeGrid::new(0.0, 80.0, 8000).unwrap();
        let c = CovariateSet::empty(g);
        let truth = ModelSpec::without_covariates(
            DriftSpec::linear_affine(0.0, -1.0),
            DiffusionSpec::constant(1.0),
        );
        let p = euler_maruyama(&truth, &c, 1.0, &g, 21).unwrap();
        let bounds = [(0.0, 0.0), (-5.0, 5.0), (1.0, 1.0)];
        let fit = fit_mle(&truth, &p, &c, &bounds, &AnnealingSchedule::default(), 2).unwrap();
        assert!((fit.theta_hat[1] + 1.0).abs() < 0.15, "{:?}", fit.theta_hat);
        assert_eq!(fit.k, 1);
        assert_eq!(fit.bic, bic(fit.neg_loglik, 1, 8000));
    }

    #[test]
    fn fit_mle_with_misspecified_sigma_completes() {
        let g = TimeGrid::new(0.0, 5.0, 500).unwrap();
        let c = CovariateSet::empty(g);
        let truth = ModelSpec::without_covariates(
            DriftSpec::linear_affine(0.5, -1.0),
            DiffusionSpec::constant(1.0),
        );
        let p = euler_maruyama(&truth, &c, 0.0, &g, 4).unwrap();
        let wrong = ModelSpec::without_covariates(
            DriftSpec::linear_affine(0.0, 0.0),
            DiffusionSpec::constant(2.0),
        );
        let fit = fit_mle(
            &wrong,
            &p,
            &c,
            &[(-3.0, 3.0), (-3.0, 3.0), (1.0, 1.0)],
            &AnnealingSchedule::default(),
            1,
        );
        assert!(fit.is_ok());
    }

    #[test]
    fn ckls_brownian_with_drift_reduction() {
        let g = TimeGrid::new(0.0, 10.0, 1000).unwrap();
        let m = ckls_model([0.4, 0.0, 0.3, 0.0]);
        let p = euler_maruyama(&m, &CovariateSet::empty(g), 1.0, &g, 6).unwrap();
        let bounds = [(-2.0, 2.0), (0.0, 0.0), (0.3, 0.3), (0.0, 0.0)];
        let fit = fit_ckls(&p, &bounds, &AnnealingSchedule::default(), 3).unwrap();
        let closed = (p.last() - p.x0()) / 10.0;
        assert!((fit.theta_hat[0] - closed).abs() < 1e-3);
        assert_eq!(fit.k, 1);
    }

    #[test]
    fn ckls_degenerate_inputs() {
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let flat = SamplePath::new(g, vec![0.5; 11]).unwrap();
        let b = [(-1.0, 1.0), (-1.0, 1.0), (0.1, 1.0), (0.0, 1.0)];
        assert!(matches!(
            fit_ckls(&flat, &b, &AnnealingSchedule::default(), 0),
            Err(Error::DegenerateData(_))
        ));
        let mut v: Vec<f64> = (0..11).map(|k| 0.1 * k as f64).collect();
        v[3] = -0.2;
        let neg = SamplePath::new(g, v).unwrap();
        assert!(matches!(
            fit_ckls(&neg, &b, &AnnealingSchedule::default(), 0),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn box_wls_matches_grid_search() {
        let (a, b, c, d, e) = (2.0, 0.5, 1.0, 3.0, -4.0);
        let b1 = (-1.0, 1.0);
        let b2 = (-2.0, 2.0);
        let (t1, t2) = box_wls(a, b, c, d, e, b1, b2);
        let q = |t1: f64, t2: f64| {
            a * t1 * t1 + 2.0 * b * t1 * t2 + c * t2 * t2 - 2.0 * d * t1 - 2.0 * e * t2
        };
        let mut best = f64::INFINITY;
        for i in 0..=400 {
            for j in 0..=400 {
                let x = b1.0 + (b1.1 - b1.0) * i as f64 / 400.0;
                let y = b2.0 + (b2.1 - b2.0) * j as f64 / 400.0;
                best = best.min(q(x, y));
            }
        }
        assert!(q(t1, t2) <= best + 1e-12);
    }
}
