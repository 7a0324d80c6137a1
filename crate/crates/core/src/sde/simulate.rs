use rand::Rng as _;
use rand_distr::StandardNormal;

use super::covariates::CovariateSet;
use super::grid::{SamplePath, TimeGrid};
use super::model::{DiffusionSpec, DriftSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::rng;

/// Euler–Maruyama simulation with left-endpoint coefficients:
///
/// `X_{k+1} = X_k + φ(t_k) b(t_k, X_k) dt + σ(t_k, X_k) √dt ε_k`
///
/// with `ε_k` iid standard normal drawn from a ChaCha8 generator seeded by `seed`.
pub fn euler_maruyama(
    model: &ModelSpec,
    covs: &CovariateSet,
    x0: f64,
    grid: &TimeGrid,
    seed: u64,
) -> Result<SamplePath> {
    grid.ensure_same(covs.grid(), "simulation grid vs covariates")?;
    model.check_covariates(covs)?;
    if !x0.is_finite() {
        return Err(Error::NonFinite { step: 0 });
    }
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut rng = rng::from_seed(seed);
    let mut values = Vec::with_capacity(grid.len());
    let mut x = x0;
    values.push(x);
    for k in 0..grid.n_steps() {
        let eps: f64 = rng.sample(StandardNormal);
        let (drift, sigma) = model.coefficients(covs, k, x);
        if !(drift.is_finite() && sigma.is_finite()) {
            return Err(Error::NonFinite { step: k });
        }
        x += drift * dt + sigma * sqrt_dt * eps;
        if !x.is_finite() {
            return Err(Error::NonFinite { step: k + 1 });
        }
        values.push(x);
    }
    SamplePath::new(*grid, values)
}

/// One covariate process `dz = b(t, z) dt + σ(t, z) dW`, started at `z0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateSde {
    pub drift: DriftSpec,
    pub diffusion: DiffusionSpec,
    pub z0: f64,
}

impl CovariateSde {
    /// `dz = (a + b z) dt + dW`, `z(0) = 0`.
    pub fn affine(a: f64, b: f64) -> Self {
        Self {
            drift: DriftSpec::linear_affine(a, b),
            diffusion: DiffusionSpec::constant(1.0),
            z0: 0.0,
        }
    }
}

/// The three covariate families used in the single- and multi-individual
/// studies: `(c1 + c2 z) dt + dW`, `c3 dt + dW` and `c4 z dt + dW`.
pub fn benchmark_covariate_sdes(c: [f64; 4]) -> Vec<CovariateSde> {
    vec![
        CovariateSde::affine(c[0], c[1]),
        CovariateSde::affine(c[2], 0.0),
        CovariateSde::affine(0.0, c[3]),
    ]
}

/// Simulate `p` covariate paths with independent noise streams; stream `l`
/// uses seed `rng::derive(seed, l)`. Links are identity.
pub fn simulate_covariates(
    sdes: &[CovariateSde],
    grid: &TimeGrid,
    seed: u64,
) -> Result<CovariateSet> {
    let none = CovariateSet::empty(*grid);
    let series = sdes
        .iter()
        .enumerate()
        .map(|(l, sde)| {
            let model = ModelSpec::without_covariates(sde.drift.clone(), sde.diffusion.clone());
            euler_maruyama(&model, &none, sde.z0, grid, rng::derive(seed, l as u64))
                .map(|p| p.values().to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    CovariateSet::identity(*grid, series)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TimeGrid {
        TimeGrid::new(0.0, 5.0, 500).unwrap()
    }

    #[test]
    fn null_dynamics_give_constant_path() {
        let g = grid();
        let m = ModelSpec::new(
            DriftSpec::linear_affine(1.0, 1.0),
            DiffusionSpec::constant(0.0),
            vec![],
            vec![0.0],
        )
        .unwrap();
        let p = euler_maruyama(&m, &CovariateSet::empty(g), 3.0, &g, 9).unwrap();
        assert!(p.values().iter().all(|&x| x == 3.0));
    }

    #[test]
    fn constant_drift_is_exact() {
        let g = grid();
        let m = ModelSpec::without_covariates(
            DriftSpec::linear_affine(0.7, 0.0),
            DiffusionSpec::constant(0.0),
        );
        let p = euler_maruyama(&m, &CovariateSet::empty(g), 1.0, &g, 1).unwrap();
        for (k, x) in p.values().iter().enumerate() {
            assert!((x - (1.0 + 0.7 * g.time(k))).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let g = grid();
        let m = ModelSpec::without_covariates(
            DriftSpec::linear_affine(0.0, -1.0),
            DiffusionSpec::constant(1.0),
        );
        let c = CovariateSet::empty(g);
        let a = euler_maruyama(&m, &c, 0.5, &g, 77).unwrap();
        let b = euler_maruyama(&m, &c, 0.5, &g, 77).unwrap();
        let d = euler_maruyama(&m, &c, 0.5, &g, 78).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, d);
    }

    #[test]
    fn blow_up_reports_step() {
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let m = ModelSpec::without_covariates(
            DriftSpec::linear_affine(0.0, 1e300),
            DiffusionSpec::constant(0.0),
        );
        let err = euler_maruyama(&m, &CovariateSet::empty(g), 1.0, &g, 0).unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: 1 }));
    }

    #[test]
    fn empty_covariate_list() {
        let c = simulate_covariates(&[], &grid(), 3).unwrap();
        assert_eq!(c.p(), 0);
    }

    #[test]
    fn benchmark_covariates_have_grid_length() {
        let c = simulate_covariates(
            &benchmark_covariate_sdes([0.01, -0.005, 0.002, 0.01]),
            &grid(),
            5,
        )
        .unwrap();
        assert_eq!(c.p(), 3);
        for l in 0..3 {
            assert_eq!(c.series(l).len(), 501);
            assert_eq!(c.series(l)[0], 0.0);
        }
        assert_ne!(c.series(0), c.series(1));
    }
}
