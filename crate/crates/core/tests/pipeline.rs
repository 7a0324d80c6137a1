use sdebf::io::config::{Comparison, PriorKind};
use sdebf::io::csv::load_series_csv;
use sdebf::io::replicate::{run_replications, Experiment};
use sdebf::io::ExperimentConfig;
use sdebf::selection::{enumerate_masks, mask_bits};

#[test]
fn config_file_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let text = "[grid]\nhorizon = 5.0\nn_steps = 500\n[model]\ndiffusion_params = [20.0]\n[prior]\nsd = 0.8\n\
                [mc]\nprior_draws = 500\nreplications = 1000\n[seeds]\nmaster = 99\n";
    let f = d.path().join("c.toml");
    std::fs::write(&f, text).unwrap();
    let cfg = ExperimentConfig::load(&f).unwrap();
    assert_eq!(cfg.mc.replications, 1000);
    let canon = cfg.to_toml().unwrap();
    let again = ExperimentConfig::from_toml(&canon).unwrap();
    assert_eq!(again, cfg);
    assert_eq!(again.to_toml().unwrap(), canon);
    assert_eq!(again.digest(), cfg.digest());
}

#[test]
fn benchmark_has_eight_candidate_models() {
    let cfg = ExperimentConfig::default();
    let exp = Experiment::build(&cfg, 1).unwrap();
    assert_eq!(exp.covs.p(), 3);
    let masks: Vec<String> = enumerate_masks(exp.covs.p())
        .unwrap()
        .iter()
        .map(|m| mask_bits(m))
        .collect();
    assert_eq!(
        masks,
        ["000", "001", "010", "011", "100", "101", "110", "111"]
    );
    assert_eq!(exp.truth.n_params(), 6);
    assert_eq!(exp.grid.n_steps(), 500);
    assert_eq!(exp.truth.diffusion.params, vec![20.0]);
}

#[test]
fn daily_series_with_gaps_is_resampled() {
    let d = tempfile::tempdir().unwrap();
    // 467 trading days: weekends skipped, so the calendar times are irregular.
    let mut body = String::from("day,close\n");
    let mut day = 0;
    for i in 0..467 {
        body.push_str(&format!("{day},{}\n", 100.0 + (i as f64 * 0.1).sin()));
        day += if i % 5 == 4 { 3 } else { 1 };
    }
    let f = d.path().join("s.csv");
    std::fs::write(&f, body).unwrap();
    assert!(load_series_csv(&f, false).is_err());
    let s = load_series_csv(&f, true).unwrap();
    assert!(s.resampled);
    assert!(s.note.as_deref().unwrap().contains("467 uniform points"));
    let p = s.into_path().unwrap();
    assert_eq!(p.values().len(), 467);
}

#[test]
fn marginal_and_ratio_differ_by_the_truth_log_density() {
    let mut cfg = ExperimentConfig::default();
    cfg.grid.n_steps = 100;
    cfg.mc.replications = 2;
    cfg.mc.prior_draws = 50;
    cfg.prior.kind = PriorKind::Uniform;
    cfg.prior.bound = 2.0;
    let ratio = run_replications(&cfg).unwrap();
    cfg.prior.comparison = Comparison::Marginal;
    let marginal = run_replications(&cfg).unwrap();
    // Per replicate the two differ by log f_θ0 / T, the same for every mask.
    let gaps: Vec<f64> = ratio
        .entries
        .iter()
        .zip(&marginal.entries)
        .map(|(a, b)| b.mean - a.mean)
        .collect();
    for g in &gaps {
        assert!(
            (g - gaps[0]).abs() < 1e-9 * (1.0 + gaps[0].abs()),
            "{gaps:?}"
        );
    }
}
