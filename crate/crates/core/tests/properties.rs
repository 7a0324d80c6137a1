use proptest::prelude::*;
use sdebf::asymptotics::{kl_bar_infinity, kl_bar_lower_bound, phi_bar, phi_bar_cross, KappaSpec};
use sdebf::bayes::LogBFEstimate;
use sdebf::girsanov::{cross_v, log_density, log_density_ratio, quadrature_v, DensityEvaluator};
use sdebf::numeric::{logsumexp, summarize};
use sdebf::sde::{
    euler_maruyama, phi_at, CovariateSet, DiffusionSpec, DriftSpec, ModelSpec, SamplePath, TimeGrid,
};
use sdebf::selection::{enumerate_masks, ModelRanking, RankedModel};

fn covariates(n: usize, p: usize, seed: u64) -> CovariateSet {
    let g = TimeGrid::new(0.0, 2.0, n).unwrap();
    let series = (0..p)
        .map(|l| {
            g.times()
                .map(|t| ((l + 1) as f64 * t + seed as f64 * 0.37).sin() + 0.1 * l as f64)
                .collect()
        })
        .collect();
    CovariateSet::identity(g, series).unwrap()
}

fn model(beta: (f64, f64), xi: &[f64], mask: &[bool], sigma: f64) -> ModelSpec {
    ModelSpec::new(
        DriftSpec::linear_affine(beta.0, beta.1),
        DiffusionSpec::constant(sigma),
        mask.to_vec(),
        xi.to_vec(),
    )
    .unwrap()
}

fn estimate(value: f64) -> LogBFEstimate {
    LogBFEstimate {
        value,
        std_error: 0.0,
        n_draws: 1,
        ess: 1.0,
        mean_log_weight: value,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn phi_is_linear_in_xi(
        a in proptest::collection::vec(-3.0..3.0f64, 4),
        b in proptest::collection::vec(-3.0..3.0f64, 4),
        s in -2.0..2.0f64,
        k in 0usize..=50,
    ) {
        let covs = covariates(50, 3, 1);
        let mask = [true; 3];
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + s * y).collect();
        let lhs = phi_at(&mix, &mask, &covs, k).unwrap();
        let rhs = phi_at(&a, &mask, &covs, k).unwrap() + s * phi_at(&b, &mask, &covs, k).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn v_nonnegative_and_cauchy_schwarz(
        b0 in (-2.0..2.0f64, -1.0..1.0f64),
        b1 in (-2.0..2.0f64, -1.0..1.0f64),
        xi0 in proptest::collection::vec(-2.0..2.0f64, 3),
        xi1 in proptest::collection::vec(-2.0..2.0f64, 3),
        sigma in 0.1..5.0f64,
        seed in any::<u64>(),
    ) {
        let covs = covariates(100, 2, seed % 7);
        let m0 = model(b0, &xi0, &[true, true], sigma);
        let m1 = model(b1, &xi1, &[true, true], sigma);
        let path = euler_maruyama(&m0, &covs, 0.0, covs.grid(), seed).unwrap();
        let v0 = quadrature_v(&m0, &path, &covs).unwrap();
        let v1 = quadrature_v(&m1, &path, &covs).unwrap();
        let c = cross_v(&m0, &m1, &path, &covs).unwrap();
        prop_assert!(v0 >= 0.0 && v1 >= 0.0);
        prop_assert!(c.abs() <= (v0 * v1).sqrt() * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn ratio_is_antisymmetric_and_evaluator_agrees(
        b0 in (-2.0..2.0f64, -1.0..1.0f64),
        b1 in (-2.0..2.0f64, -1.0..1.0f64),
        xi in proptest::collection::vec(-2.0..2.0f64, 2),
        seed in any::<u64>(),
    ) {
        let covs = covariates(80, 1, 3);
        let m0 = model(b0, &xi, &[true], 1.5);
        let m1 = model(b1, &xi, &[true], 1.5);
        let path = euler_maruyama(&m0, &covs, 0.2, covs.grid(), seed).unwrap();
        let r01 = log_density_ratio(&m0, &m1, &path, &covs).unwrap();
        let r10 = log_density_ratio(&m1, &m0, &path, &covs).unwrap();
        prop_assert!((r01 + r10).abs() <= 1e-9 * (1.0 + r01.abs()));
        let ev = DensityEvaluator::new(&m1, &path, &covs).unwrap();
        let direct = log_density(&m1, &path, &covs).unwrap();
        let fast = ev.log_density(&m1.theta());
        prop_assert!((fast - direct).abs() <= 1e-9 * (1.0 + direct.abs()));
    }

    #[test]
    fn kl_bar_nonnegative(
        xi0 in proptest::collection::vec(-3.0..3.0f64, 3),
        xi1 in proptest::collection::vec(-3.0..3.0f64, 2),
        eta0 in -3.0..3.0f64,
        eta1 in -3.0..3.0f64,
    ) {
        let covs = covariates(60, 2, 5);
        let (m0, m1) = ([true, true], [false, true]);
        let p0 = phi_bar(&xi0, &covs, &m0).unwrap();
        let p1 = phi_bar(&xi1, &covs, &m1).unwrap();
        let cross = phi_bar_cross(&xi0, &m0, &xi1, &m1, &covs).unwrap();
        let kappa = KappaSpec::ConstantRatio { eta0, eta1 };
        let k = kl_bar_infinity(&p0, &p1, cross, &kappa).unwrap();
        let scale = 1.0 + p0.phi2 * eta0 * eta0 + p1.phi2 * eta1 * eta1;
        prop_assert!(k >= -1e-12 * scale);
        prop_assert!(k >= kl_bar_lower_bound(&p0, &p1, &kappa) - 1e-12 * scale);
    }

    #[test]
    fn ranking_ignores_input_order_and_monotone_maps(
        values in proptest::collection::vec(-50.0..50.0f64, 8),
        shift in -10.0..10.0f64,
        scale in 0.1..10.0f64,
        rot in 0usize..8,
    ) {
        let masks = enumerate_masks(3).unwrap();
        let entries: Vec<RankedModel> = masks
            .iter()
            .zip(&values)
            .map(|(m, &v)| RankedModel { mask: m.clone(), estimate: estimate(v) })
            .collect();
        let base = ModelRanking::new(entries.clone()).unwrap();
        let mut rotated = entries.clone();
        rotated.rotate_left(rot);
        let order = |r: &ModelRanking| r.entries.iter().map(|e| e.mask.clone()).collect::<Vec<_>>();
        prop_assert_eq!(order(&base), order(&ModelRanking::new(rotated).unwrap()));
        let mapped: Vec<RankedModel> = entries
            .into_iter()
            .map(|mut e| {
                e.estimate.value = scale * e.estimate.value + shift;
                e
            })
            .collect();
        prop_assert_eq!(order(&base), order(&ModelRanking::new(mapped).unwrap()));
    }

    #[test]
    fn logsumexp_shift_equivariant(xs in proptest::collection::vec(-700.0..700.0f64, 1..50), c in -300.0..300.0f64) {
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let a = logsumexp(&xs) + c;
        let b = logsumexp(&shifted);
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        prop_assert!(b >= shifted.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
}

/// Euler for `dX = b X dt` gives `x0 (1 + b dt)^n`; its error against
/// `x0 e^{bT}` must halve when the step halves.
#[test]
fn euler_weak_error_is_first_order() {
    let b = -0.8;
    let errs: Vec<f64> = [100usize, 200, 400, 800]
        .iter()
        .map(|&n| {
            let g = TimeGrid::new(0.0, 2.0, n).unwrap();
            let m = ModelSpec::new(
                DriftSpec::linear_affine(0.0, b),
                DiffusionSpec::constant(0.0),
                vec![],
                vec![1.0],
            )
            .unwrap();
            let p = euler_maruyama(&m, &CovariateSet::empty(g), 1.0, &g, 0).unwrap();
            (p.last() - (2.0 * b).exp()).abs()
        })
        .collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((ratio - 2.0).abs() < 0.05, "{errs:?}");
    }
}

/// OU `dX = −a X dt + s dW` from 0: exact Euler moments are `E X_n = 0`,
/// `Var X_n = s² dt Σ_{j<n} (1 − a dt)^{2j}`.
#[test]
fn ou_moments_match_euler_recursion() {
    let (a, s) = (1.5, 0.7);
    let g = TimeGrid::new(0.0, 3.0, 300).unwrap();
    let m = ModelSpec::new(
        DriftSpec::linear_affine(0.0, -a),
        DiffusionSpec::constant(s),
        vec![],
        vec![1.0],
    )
    .unwrap();
    let covs = CovariateSet::empty(g);
    let ends: Vec<f64> = (0..4000u64)
        .map(|r| euler_maruyama(&m, &covs, 0.0, &g, r).unwrap().last())
        .collect();
    let q = (1.0 - a * g.dt()).powi(2);
    let var = s * s * g.dt() * (1.0 - q.powi(300)) / (1.0 - q);
    let sm = summarize(&ends);
    assert!(sm.mean.abs() < 4.0 * sm.se.unwrap(), "{sm:?}");
    let v = sm.var.unwrap();
    // sd of a sample variance of normals is var·sqrt(2/(n−1)).
    assert!(
        (v - var).abs() < 4.0 * var * (2.0 / 3999.0f64).sqrt(),
        "{v} vs {var}"
    );
}

/// Zero drift: increments are iid `N(0, σ² dt)`.
#[test]
fn brownian_increments() {
    let g = TimeGrid::new(0.0, 10.0, 20_000).unwrap();
    let sigma = 2.0;
    let m = ModelSpec::new(
        DriftSpec::linear_affine(0.0, 0.0),
        DiffusionSpec::constant(sigma),
        vec![],
        vec![1.0],
    )
    .unwrap();
    let p: SamplePath = euler_maruyama(&m, &CovariateSet::empty(g), 0.0, &g, 11).unwrap();
    let inc: Vec<f64> = p.values().windows(2).map(|w| w[1] - w[0]).collect();
    let s = summarize(&inc);
    let var = sigma * sigma * g.dt();
    assert!(s.mean.abs() < 4.0 * s.se.unwrap());
    assert!((s.var.unwrap() - var).abs() < 4.0 * var * (2.0 / 19_999.0f64).sqrt());
    let lag1: f64 = inc.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (inc.len() - 1) as f64;
    assert!(lag1.abs() < 4.0 * var / (inc.len() as f64).sqrt());
}
