//! Discretized Girsanov functionals.
//!
//! For a model with drift `μ(t, x) = φ(t) b(t, x)` and diffusion `σ(t, x)`,
//! on a path observed on a uniform grid:
//!
//! ```text
//! U = Σ_k μ_k / σ_k² (X_{k+1} − X_k)
//! V = Σ_k μ_k² / σ_k² dt
//! log f = U − V / 2
//! ```
//!
//! with every coefficient evaluated at the left endpoint `(t_k, X_k)`. The
//! log density is relative to the law of the null-drift diffusion with the
//! same `σ`, so only models sharing a diffusion specification can be compared.
//!
//! [`gaussian_transition_oracle`] recomputes the same quantity as a sum of
//! Euler transition log-density ratios and serves as an independent check.

use std::f64::consts::PI;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;
use crate::sde::{CovariateSet, DiffusionSpec, DriftFamily, ModelSpec, SamplePath};

/// Diffusion values below this are rejected.
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GirsanovStats {
    pub u: f64,
    pub v: f64,
    /// `V_{θ0,θ1}` against a second model, when one was supplied.
    pub cross_v: Option<f64>,
}

impl GirsanovStats {
    pub fn log_density(&self) -> f64 {
        self.u - 0.5 * self.v
    }
}

fn check_inputs(model: &ModelSpec, path: &SamplePath, covs: &CovariateSet) -> Result<()> {
    path.grid().ensure_same(covs.grid(), "path vs covariates")?;
    model.check_covariates(covs)
}

#[inline]
fn checked_sigma(diffusion: &DiffusionSpec, x: f64, step: usize) -> Result<f64> {
    let s = diffusion.eval(x);
    if !(s.abs() >= SIGMA_FLOOR) {
        return Err(Error::DiffusionFloor { step, value: s });
    }
    Ok(s)
}

struct Sums {
    u: CompensatedSum,
    v: CompensatedSum,
    cross: CompensatedSum,
}

/// One pass over grid steps `range`, accumulating `U` and `V` for `model`
/// and optionally the cross term against `other`.
fn accumulate(
    model: &ModelSpec,
    other: Option<&ModelSpec>,
    path: &SamplePath,
    covs: &CovariateSet,
    range: Range<usize>,
) -> Result<Sums> {
    check_inputs(model, path, covs)?;
    if let Some(o) = other {
        check_inputs(o, path, covs)?;
        if o.diffusion != model.diffusion {
            return Err(Error::DiffusionMismatch);
        }
    }
    let n = path.grid().n_steps();
    if range.end > n || range.start > range.end {
        return Err(Error::IndexOutOfRange {
            index: range.end,
            n_steps: n,
        });
    }
    let dt = path.grid().dt();
    let xs = path.values();
    let mut sums = Sums {
        u: CompensatedSum::new(),
        v: CompensatedSum::new(),
        cross: CompensatedSum::new(),
    };
    for k in range {
        let x = xs[k];
        let sigma = checked_sigma(&model.diffusion, x, k)?;
        let inv = 1.0 / (sigma * sigma);
        let mu = model.phi_unchecked(covs, k) * model.drift.eval(x, sigma);
        sums.u.add(mu * inv * (xs[k + 1] - x));
        sums.v.add(mu * mu * inv * dt);
        if let Some(o) = other {
            let mu_o = o.phi_unchecked(covs, k) * o.drift.eval(x, sigma);
            sums.cross.add(mu * mu_o * inv * dt);
        }
    }
    Ok(sums)
}

/// Left-endpoint Itô sum `U`.
pub fn ito_u(model: &ModelSpec, path: &SamplePath, covs: &CovariateSet) -> Result<f64> {
    let n = path.grid().n_steps();
    Ok(accumulate(model, None, path, covs, 0..n)?.u.value())
}

/// Time integral `V ≥ 0`.
pub fn quadrature_v(model: &ModelSpec, path: &SamplePath, covs: &CovariateSet) -> Result<f64> {
    let n = path.grid().n_steps();
    Ok(accumulate(model, None, path, covs, 0..n)?.v.value())
}

/// Cross term `V_{θ0,θ1} = Σ μ0 μ1 / σ² dt`.
pub fn cross_v(
    m0: &ModelSpec,
    m1: &ModelSpec,
    path: &SamplePath,
    covs: &CovariateSet,
) -> Result<f64> {
    let n = path.grid().n_steps();
    Ok(accumulate(m0, Some(m1), path, covs, 0..n)?.cross.value())
}

/// `U`, `V` and (optionally) `V_{model,other}` in one pass.
pub fn girsanov_stats(
    model: &ModelSpec,
    other: Option<&ModelSpec>,
    path: &SamplePath,
    covs: &CovariateSet,
) -> Result<GirsanovStats> {
    let n = path.grid().n_steps();
    interval_stats(model, other, path, covs, 0..n)
}

/// Statistics restricted to grid steps `steps` (increments `X_k → X_{k+1}`
/// for `k` in the range).
pub fn interval_stats(
    model: &ModelSpec,
    other: Option<&ModelSpec>,
    path: &SamplePath,
    covs: &CovariateSet,
    steps: Range<usize>,
) -> Result<GirsanovStats> {
    let s = accumulate(model, other, path, covs, steps)?;
    Ok(GirsanovStats {
        u: s.u.value(),
        v: s.v.value(),
        cross_v: other.map(|_| s.cross.value()),
    })
}

/// `log f = U − V / 2`, the log Radon–Nikodym derivative against the null-drift law.
pub fn log_density(model: &ModelSpec, path: &SamplePath, covs: &CovariateSet) -> Result<f64> {
    Ok(girsanov_stats(model, None, path, covs)?.log_density())
}

/// `log f_{m1} − log f_{m0}`.
pub fn log_density_ratio(
    m1: &ModelSpec,
    m0: &ModelSpec,
    path: &SamplePath,
    covs: &CovariateSet,
) -> Result<f64> {
    if m1.diffusion != m0.diffusion {
        return Err(Error::DiffusionMismatch);
    }
    Ok(log_density(m1, path, covs)? - log_density(m0, path, covs)?)
}

fn normal_ln_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (2.0 * PI * var).ln() - d * d / (2.0 * var)
}

/// Sum over steps of `log N(X_{k+1}; X_k + μ_k dt, σ_k² dt) − log N(X_{k+1}; X_k, σ_k² dt)`.
pub fn gaussian_transition_oracle(
    model: &ModelSpec,
    path: &SamplePath,
    covs: &CovariateSet,
) -> Result<f64> {
    check_inputs(model, path, covs)?;
    let dt = path.grid().dt();
    let xs = path.values();
    let mut acc = CompensatedSum::new();
    for k in 0..path.grid().n_steps() {
        let x = xs[k];
        let sigma = checked_sigma(&model.diffusion, x, k)?;
        let var = sigma * sigma * dt;
        let mu = model.phi_unchecked(covs, k) * model.drift.eval(x, sigma);
        acc.add(normal_ln_pdf(xs[k + 1], x + mu * dt, var) - normal_ln_pdf(xs[k + 1], x, var));
    }
    Ok(acc.value())
}

/// Precomputed sufficient statistics for fast repeated evaluation of the
/// log density of one model template (family, diffusion, mask) at many
/// parameter values on a fixed path.
///
/// Every drift family is linear in `β` and `φ` is linear in `ξ`, so the drift
/// is bilinear: `μ_k = Σ_{q,m} ξ_q β_m a_{k,qm}` with `a_{k,qm} = g_{kq} h_{km}`.
/// Writing `c = ξ ⊗ β`:
///
/// ```text
/// U = cᵀ S1,   S1 = Σ_k a_k ΔX_k / σ_k²
/// V = cᵀ S2 c, S2 = Σ_k a_k a_kᵀ dt / σ_k²
/// ```
#[derive(Debug, Clone)]
pub struct DensityEvaluator {
    template: ModelSpec,
    nb: usize,
    dim: usize,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl DensityEvaluator {
    pub fn new(template: &ModelSpec, path: &SamplePath, covs: &CovariateSet) -> Result<Self> {
        check_inputs(template, path, covs)?;
        let family: DriftFamily = template.drift.family;
        let nb = family.arity();
        let included: Vec<usize> = template
            .mask
            .iter()
            .enumerate()
            .filter_map(|(l, &m)| m.then_some(l))
            .collect();
        let nq = 1 + included.len();
        let dim = nq * nb;
        let dt = path.grid().dt();
        let xs = path.values();
        let mut s1 = vec![CompensatedSum::new(); dim];
        let mut s2 = vec![CompensatedSum::new(); dim * dim];
        let mut a = vec![0.0; dim];
        for k in 0..path.grid().n_steps() {
            let x = xs[k];
            let sigma = checked_sigma(&template.diffusion, x, k)?;
            let w = 1.0 / (sigma * sigma);
            let h = family.basis(x, sigma);
            for q in 0..nq {
                let g = if q == 0 {
                    1.0
                } else {
                    covs.linked(included[q - 1], k)
                };
                for m in 0..nb {
                    a[q * nb + m] = g * h[m];
                }
            }
            let dx = xs[k + 1] - x;
            for i in 0..dim {
                s1[i].add(a[i] * w * dx);
                let ai = a[i] * w * dt;
                for j in i..dim {
                    s2[i * dim + j].add(ai * a[j]);
                }
            }
        }
        let s1: Vec<f64> = s1.iter().map(CompensatedSum::value).collect();
        let mut s2: Vec<f64> = s2.iter().map(CompensatedSum::value).collect();
        for i in 0..dim {
            for j in 0..i {
                s2[i * dim + j] = s2[j * dim + i];
            }
        }
        Ok(Self {
            template: template.clone(),
            nb,
            dim,
            s1,
            s2,
        })
    }

    pub fn template(&self) -> &ModelSpec {
        &self.template
    }

    pub fn n_params(&self) -> usize {
        self.template.n_params()
    }

    fn coefficients(&self, theta: &[f64]) -> Vec<f64> {
        debug_assert_eq!(theta.len(), self.n_params());
        let (beta, xi) = theta.split_at(self.nb);
        xi.iter()
            .flat_map(|x| beta.iter().map(move |b| x * b))
            .collect()
    }

    fn quad(&self, c0: &[f64], c1: &[f64]) -> f64 {
        let mut acc = CompensatedSum::new();
        for (&a, row) in c0.iter().zip(self.s2.chunks_exact(self.dim)) {
            if a == 0.0 {
                continue;
            }
            let inner: f64 = row.iter().zip(c1).map(|(s, c)| s * c).sum();
            acc.add(a * inner);
        }
        acc.value()
    }

    /// `(U, V)` at `θ = (β, ξ)`.
    pub fn stats(&self, theta: &[f64]) -> (f64, f64) {
        let c = self.coefficients(theta);
        let u = c.iter().zip(&self.s1).map(|(c, s)| c * s).sum();
        (u, self.quad(&c, &c))
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        let (u, v) = self.stats(theta);
        u - 0.5 * v
    }

    /// Checked variant of [`DensityEvaluator::log_density`].
    pub fn try_log_density(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.n_params() {
            return Err(Error::Arity(format!(
                "model takes {} parameters, got {}",
                self.n_params(),
                theta.len()
            )));
        }
        Ok(self.log_density(theta))
    }

    /// `V_{θa,θb}` for two parameter vectors of this template.
    pub fn cross_v(&self, theta_a: &[f64], theta_b: &[f64]) -> f64 {
        let ca = self.coefficients(theta_a);
        let cb = self.coefficients(theta_b);
        self.quad(&ca, &cb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{euler_maruyama, DiffusionSpec, DriftSpec, TimeGrid};
    use rand::{Rng, SeedableRng};

    fn grid() -> TimeGrid {
        TimeGrid::new(0.0, 5.0, 500).unwrap()
    }

    fn unit_model() -> ModelSpec {
        ModelSpec::without_covariates(
            DriftSpec::linear_affine(1.0, 0.0),
            DiffusionSpec::constant(1.0),
        )
    }

    fn null_model() -> ModelSpec {
        ModelSpec::new(
            DriftSpec::linear_affine(1.0, 0.5),
            DiffusionSpec::constant(1.0),
            vec![],
            vec![0.0],
        )
        .unwrap()
    }

    fn random_setup(seed: u64) -> (ModelSpec, ModelSpec, SamplePath, CovariateSet) {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = grid();
        let series: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..g.len()).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let covs = CovariateSet::identity(g, series).unwrap();
        let sigma = r.random_range(0.5..2.0);
        let mk = |r: &mut rand_chacha::ChaCha8Rng| {
            ModelSpec::new(
                DriftSpec::linear_affine(r.random_range(-1.0..1.0), r.random_range(-0.5..0.2)),
                DiffusionSpec::constant(sigma),
                vec![true, r.random_bool(0.5)],
                vec![],
            )
            .map(|_| ())
            .ok();
            let mask = vec![true, r.random_bool(0.5)];
            let k = 1 + mask.iter().filter(|&&m| m).count();
            ModelSpec::new(
                DriftSpec::linear_affine(r.random_range(-1.0..1.0), r.random_range(-0.5..0.2)),
                DiffusionSpec::constant(sigma),
                mask,
                (0..k).map(|_| r.random_range(-1.0..1.0)).collect(),
            )
            .unwrap()
        };
        let m0 = mk(&mut r);
        let m1 = mk(&mut r);
        let path = euler_maruyama(&m0, &covs, r.random_range(-1.0..1.0), &g, seed).unwrap();
        (m0, m1, path, covs)
    }

    #[test]
    fn null_drift_gives_zero() {
        let g = grid();
        let c = CovariateSet::empty(g);
        let p = euler_maruyama(&unit_model(), &c, 0.0, &g, 3).unwrap();
        let m = null_model();
        assert_eq!(ito_u(&m, &p, &c).unwrap(), 0.0);
        assert_eq!(quadrature_v(&m, &p, &c).unwrap(), 0.0);
        assert_eq!(log_density(&m, &p, &c).unwrap(), 0.0);
        assert_eq!(gaussian_transition_oracle(&m, &p, &c).unwrap(), 0.0);
        assert_eq!(cross_v(&unit_model(), &m, &p, &c).unwrap(), 0.0);
    }

    #[test]
    fn unit_drift_telescopes() {
        let g = grid();
        let c = CovariateSet::empty(g);
        let p = euler_maruyama(&unit_model(), &c, 0.3, &g, 5).unwrap();
        let u = ito_u(&unit_model(), &p, &c).unwrap();
        assert!((u - (p.last() - p.x0())).abs() < 1e-12);
        assert!((quadrature_v(&unit_model(), &p, &c).unwrap() - 5.0).abs() < 1e-12);
        let ld = log_density(&unit_model(), &p, &c).unwrap();
        assert!((ld - (p.last() - p.x0() - 2.5)).abs() < 1e-12);
    }

    #[test]
    fn split_sum_matches_full_sum() {
        for seed in 0..10 {
            let (m0, _, p, c) = random_setup(seed);
            let full = ito_u(&m0, &p, &c).unwrap();
            let a = interval_stats(&m0, None, &p, &c, 0..250).unwrap().u;
            let b = interval_stats(&m0, None, &p, &c, 250..500).unwrap().u;
            assert!((full - (a + b)).abs() < 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn quadrature_matches_naive_high_precision_resum() {
        for seed in 0..10 {
            let (m0, _, p, c) = random_setup(seed);
            let v = quadrature_v(&m0, &p, &c).unwrap();
            let dt = p.grid().dt();
            // Oracle: sort terms by magnitude and sum from the smallest.
            let mut terms: Vec<f64> = (0..500)
                .map(|k| {
                    let x = p.values()[k];
                    let s = m0.diffusion.eval(x);
                    let mu = phi_eval_test(&m0, &c, k) * m0.drift.eval(x, s);
                    mu * mu / (s * s) * dt
                })
                .collect();
            terms.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap());
            let oracle: f64 = terms.iter().sum();
            assert!((v - oracle).abs() < 1e-10, "seed {seed}");
        }
    }

    fn phi_eval_test(m: &ModelSpec, c: &CovariateSet, k: usize) -> f64 {
        crate::sde::phi_eval(m, c, k).unwrap()
    }

    #[test]
    fn cross_v_properties() {
        for seed in 0..20 {
            let (m0, m1, p, c) = random_setup(seed);
            let v0 = quadrature_v(&m0, &p, &c).unwrap();
            let v1 = quadrature_v(&m1, &p, &c).unwrap();
            assert!((cross_v(&m0, &m0, &p, &c).unwrap() - v0).abs() <= 1e-12 * v0.max(1.0));
            let x = cross_v(&m0, &m1, &p, &c).unwrap();
            assert!(x.abs() <= (v0 * v1).sqrt() + 1e-12);
            assert!((x - cross_v(&m1, &m0, &p, &c).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn ratio_is_antisymmetric_and_matches_oracle() {
        for seed in 0..20 {
            let (m0, m1, p, c) = random_setup(seed);
            let r10 = log_density_ratio(&m1, &m0, &p, &c).unwrap();
            let r01 = log_density_ratio(&m0, &m1, &p, &c).unwrap();
            assert!((r10 + r01).abs() < 1e-12);
            assert_eq!(log_density_ratio(&m0, &m0, &p, &c).unwrap(), 0.0);
            let oracle = gaussian_transition_oracle(&m1, &p, &c).unwrap()
                - gaussian_transition_oracle(&m0, &p, &c).unwrap();
            assert!(
                (r10 - oracle).abs() < 1e-9,
                "seed {seed}: {r10} vs {oracle}"
            );
        }
    }

    #[test]
    fn single_step_complete_the_square() {
        // One step with φ b dt = ΔX and σ² dt = 1: the ratio is ΔX² / 2.
        let g = TimeGrid::new(0.0, 1.0, 1).unwrap();
        let p = SamplePath::new(g, vec![0.0, 1.7]).unwrap();
        let m = ModelSpec::without_covariates(
            DriftSpec::linear_affine(1.7, 0.0),
            DiffusionSpec::constant(1.0),
        );
        let c = CovariateSet::empty(g);
        let o = gaussian_transition_oracle(&m, &p, &c).unwrap();
        assert!((o - 1.7 * 1.7 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn diffusion_floor_and_mismatch() {
        let g = grid();
        let c = CovariateSet::empty(g);
        let p = euler_maruyama(&unit_model(), &c, 0.0, &g, 1).unwrap();
        let tiny = ModelSpec::without_covariates(
            DriftSpec::linear_affine(1.0, 0.0),
            DiffusionSpec::constant(1e-13),
        );
        assert!(matches!(
            ito_u(&tiny, &p, &c),
            Err(Error::DiffusionFloor { step: 0, .. })
        ));
        let other = ModelSpec::without_covariates(
            DriftSpec::linear_affine(1.0, 0.0),
            DiffusionSpec::constant(2.0),
        );
        assert!(matches!(
            log_density_ratio(&other, &unit_model(), &p, &c),
            Err(Error::DiffusionMismatch)
        ));
        assert!(matches!(
            cross_v(&other, &unit_model(), &p, &c),
            Err(Error::DiffusionMismatch)
        ));
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let g = grid();
        let p = euler_maruyama(&unit_model(), &CovariateSet::empty(g), 0.0, &g, 1).unwrap();
        let other = CovariateSet::empty(TimeGrid::new(0.0, 5.0, 499).unwrap());
        assert!(matches!(
            ito_u(&unit_model(), &p, &other),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn evaluator_matches_direct_sums() {
        for seed in 0..20 {
            let (m0, m1, p, c) = random_setup(seed);
            for m in [&m0, &m1] {
                let ev = DensityEvaluator::new(m, &p, &c).unwrap();
                let (u, v) = ev.stats(&m.theta());
                let s = girsanov_stats(m, None, &p, &c).unwrap();
                assert!((u - s.u).abs() <= 1e-10 * s.u.abs().max(1.0), "seed {seed}");
                assert!((v - s.v).abs() <= 1e-10 * s.v.max(1.0), "seed {seed}");
            }
            let ev = DensityEvaluator::new(&m0, &p, &c).unwrap();
            let alt = m0
                .with_theta(&m0.theta().iter().map(|t| t * 0.7 + 0.1).collect::<Vec<_>>())
                .unwrap();
            let direct = cross_v(&m0, &alt, &p, &c).unwrap();
            assert!(
                (ev.cross_v(&m0.theta(), &alt.theta()) - direct).abs()
                    <= 1e-10 * direct.abs().max(1.0)
            );
        }
    }

    #[test]
    fn evaluator_handles_constant_ratio_and_ckls() {
        let g = grid();
        let c = CovariateSet::empty(g);
        let truth = ModelSpec::without_covariates(
            DriftSpec::constant_ratio(0.8),
            DiffusionSpec::constant(2.0),
        );
        let p = euler_maruyama(&truth, &c, 1.0, &g, 11).unwrap();
        let ev = DensityEvaluator::new(&truth, &p, &c).unwrap();
        let direct = log_density(&truth, &p, &c).unwrap();
        assert!((ev.log_density(&truth.theta()) - direct).abs() < 1e-10);

        let ckls = ModelSpec::without_covariates(
            DriftSpec::new(DriftFamily::Ckls, vec![0.1, -0.2]).unwrap(),
            DiffusionSpec::ckls(0.5, 0.7),
        );
        let p = euler_maruyama(&ckls, &c, 0.5, &g, 12).unwrap();
        let ev = DensityEvaluator::new(&ckls, &p, &c).unwrap();
        let direct = log_density(&ckls, &p, &c).unwrap();
        assert!((ev.log_density(&ckls.theta()) - direct).abs() < 1e-9 * direct.abs().max(1.0));
    }
}
