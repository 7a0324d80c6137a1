//! `sdebf`: simulation, Bayes-factor covariate selection and CKLS fitting.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use sdebf::estimation::{ckls_model, fit_ckls, FitResult};
use sdebf::io::config::Comparison;
use sdebf::io::csv::{fmt_f64, fmt_opt, write_covariates_csv, write_path_csv};
use sdebf::io::replicate::{prior_builder, sweep_setup};
use sdebf::io::{
    load_series_csv, run_replications, system_study, write_table, Experiment, ExperimentConfig,
    OutputHeader,
};
use sdebf::rng::{self, streams};
use sdebf::sde::{euler_maruyama, CovariateSet, SamplePath, TimeGrid};
use sdebf::selection::{mask_bits, rank_masks};
use sdebf::{asymptotics, Result};

#[derive(Parser)]
#[command(
    name = "sdebf",
    version,
    about = "Bayes-factor covariate selection for SDEs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding `[seeds] master`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding `[output] dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    prior_draws: Option<usize>,
    /// Only print the seed and errors.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a path from the configured true model.
    Simulate(Wrap),
    /// Generate the covariate series.
    Covariates(Wrap),
    /// Log Bayes factor (or log marginal likelihood) of every covariate mask.
    Logbf(Wrap),
    /// Rank covariate masks and report the winner.
    Select(Wrap),
    /// Averaged normalized values over replicated data sets.
    Replicate(Wrap),
    /// Convergence sweep of (1/T) log I_T against -δ.
    Asymptotics(Wrap),
    /// Fit CKLS and its θ2 = θ4 = 0 reduction, compare by BIC.
    FitCkls(Wrap),
}

#[derive(Args)]
struct Wrap {
    #[command(flatten)]
    common: Common,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate(w)
            | Command::Covariates(w)
            | Command::Logbf(w)
            | Command::Select(w)
            | Command::Replicate(w)
            | Command::Asymptotics(w)
            | Command::FitCkls(w) => &w.common,
        }
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    header: OutputHeader,
    out: PathBuf,
    quiet: bool,
}

impl Ctx {
    fn new(c: &Common) -> Result<Self> {
        let mut cfg = match &c.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = c.seed {
            cfg.seeds.master = s;
        }
        if let Some(r) = c.replications {
            cfg.mc.replications = r;
            cfg.sweep.replications = r;
        }
        if let Some(m) = c.prior_draws {
            cfg.mc.prior_draws = m;
            cfg.sweep.prior_draws = m;
        }
        if let Some(o) = &c.out {
            cfg.output.dir = o.clone();
        }
        cfg.validate()?;
        let header = OutputHeader {
            seed: cfg.seeds.master,
            config_digest: cfg.digest(),
        };
        Ok(Self {
            out: cfg.output.dir.clone(),
            cfg,
            header,
            quiet: c.quiet,
        })
    }

    fn file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn wrote(&self, p: &Path) {
        self.say(format!("wrote {}", p.display()));
    }

    /// Observed path from `[data] path`, else a simulation from the truth.
    fn observed(&self, exp: &Experiment) -> Result<SamplePath> {
        match &self.cfg.data.path {
            Some(f) => {
                let loaded = load_series_csv(f, self.cfg.data.resample)?;
                if let Some(n) = &loaded.note {
                    self.say(n);
                }
                let path = loaded.into_path()?;
                exp.grid
                    .ensure_same(path.grid(), "config grid vs data file")?;
                Ok(path)
            }
            None => exp.simulate(
                self.cfg.model.x0,
                rng::derive(self.cfg.seeds.master, streams::PATH),
            ),
        }
    }
}

fn run(cmd: &Command) -> Result<()> {
    let ctx = Ctx::new(cmd.common())?;
    println!("seed: {}", ctx.cfg.seeds.master);
    let start = Instant::now();
    match cmd {
        Command::Simulate(_) => simulate(&ctx)?,
        Command::Covariates(_) => covariates(&ctx)?,
        Command::Logbf(_) => logbf(&ctx, false)?,
        Command::Select(_) => logbf(&ctx, true)?,
        Command::Replicate(_) => replicate(&ctx)?,
        Command::Asymptotics(_) => sweep(&ctx)?,
        Command::FitCkls(_) => ckls(&ctx)?,
    }
    ctx.say(format!("wall time: {:.2?}", start.elapsed()));
    Ok(())
}

fn simulate(ctx: &Ctx) -> Result<()> {
    let exp = Experiment::build(&ctx.cfg, ctx.cfg.seeds.master)?;
    let path = exp.simulate(
        ctx.cfg.model.x0,
        rng::derive(ctx.cfg.seeds.master, streams::PATH),
    )?;
    let f = ctx.file("path.csv");
    write_path_csv(&f, &ctx.header, &path)?;
    ctx.wrote(&f);
    write_covs(ctx, &exp.covs)
}

fn covariates(ctx: &Ctx) -> Result<()> {
    let exp = Experiment::build(&ctx.cfg, ctx.cfg.seeds.master)?;
    write_covs(ctx, &exp.covs)
}

fn write_covs(ctx: &Ctx, covs: &CovariateSet) -> Result<()> {
    if covs.p() == 0 {
        return Ok(());
    }
    let f = ctx.file("covariates.csv");
    write_covariates_csv(&f, &ctx.header, covs)?;
    ctx.wrote(&f);
    Ok(())
}

fn logbf(ctx: &Ctx, ranking: bool) -> Result<()> {
    let cfg = &ctx.cfg;
    let exp = Experiment::build(cfg, cfg.seeds.master)?;
    let path = ctx.observed(&exp)?;
    let builder = prior_builder(cfg, &exp.truth);
    let base = (cfg.prior.comparison == Comparison::Ratio).then_some(&exp.truth);
    let ranked = rank_masks(
        &path,
        &exp.covs,
        &exp.template,
        base,
        None,
        builder.as_ref(),
        cfg.mc.prior_draws,
        cfg.seeds.master,
    )?;
    let horizon = exp.grid.horizon();
    for e in ranked.entries.iter().filter(|e| e.estimate.low_ess()) {
        ctx.say(format!(
            "warning: mask {} has effective sample size {:.1}",
            mask_bits(&e.mask),
            e.estimate.ess
        ));
    }
    if ranking {
        let rows: Vec<Vec<String>> = ranked
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                vec![
                    mask_bits(&e.mask),
                    fmt_f64(e.estimate.value),
                    fmt_f64(e.estimate.std_error),
                    (i + 1).to_string(),
                ]
            })
            .collect();
        let f = ctx.file("ranking.csv");
        write_table(
            &f,
            &ctx.header,
            &["mask", "value", "std_error", "rank"],
            &rows,
        )?;
        ctx.wrote(&f);
        ctx.say(format!("winner: {}", mask_bits(ranked.winner())));
    } else {
        let mut entries = ranked.entries.clone();
        entries.sort_by(|a, b| a.mask.cmp(&b.mask));
        let rows: Vec<Vec<String>> = entries
            .iter()
            .map(|e| {
                vec![
                    mask_bits(&e.mask),
                    fmt_f64(e.estimate.value),
                    fmt_f64(e.estimate.std_error),
                    fmt_f64(e.estimate.ess),
                    e.estimate.n_draws.to_string(),
                    fmt_f64(horizon),
                    cfg.seeds.master.to_string(),
                ]
            })
            .collect();
        let f = ctx.file("logbf.csv");
        write_table(
            &f,
            &ctx.header,
            &["mask", "value", "std_error", "ess", "n", "T", "seed"],
            &rows,
        )?;
        ctx.wrote(&f);
    }
    Ok(())
}

fn replicate(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    if cfg.system.individuals > 1 {
        let report = system_study(cfg)?;
        let rows: Vec<Vec<String>> =
            std::iter::once((&report.true_masks, report.reference, "true"))
                .chain(report.combinations.iter().map(|(c, v)| (c, *v, "wrong")))
                .map(|(c, v, kind)| {
                    let masks: Vec<String> = c.iter().map(|m| mask_bits(m)).collect();
                    vec![masks.join(" "), kind.to_string(), fmt_f64(v)]
                })
                .collect();
        let f = ctx.file("system.csv");
        write_table(&f, &ctx.header, &["combination", "kind", "value"], &rows)?;
        ctx.wrote(&f);
        ctx.say(format!(
            "truth preferred: {}",
            report.truth_preferred(cfg.prior.comparison)
        ));
        return Ok(());
    }
    let report = run_replications(cfg)?;
    let rows: Vec<Vec<String>> = report
        .entries
        .iter()
        .map(|e| {
            vec![
                mask_bits(&e.mask),
                fmt_f64(e.mean),
                fmt_opt(e.se),
                e.replicates.to_string(),
            ]
        })
        .collect();
    let f = ctx.file("replicate.csv");
    write_table(&f, &ctx.header, &["mask", "mean", "se", "n"], &rows)?;
    ctx.wrote(&f);
    Ok(())
}

fn sweep(ctx: &Ctx) -> Result<()> {
    let (config, delta) = sweep_setup(&ctx.cfg)?;
    ctx.say(format!("delta = {}", delta.delta));
    let report =
        asymptotics::convergence_sweep(&config, &asymptotics::no_covariates, ctx.cfg.seeds.master)?;
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                fmt_f64(r.horizon),
                fmt_f64(r.mean),
                fmt_opt(r.se),
                fmt_opt(r.var),
                fmt_f64(r.delta_target),
                fmt_f64(r.gap),
            ]
        })
        .collect();
    let f = ctx.file("sweep.csv");
    write_table(
        &f,
        &ctx.header,
        &["T", "mean", "se", "var", "delta_target", "gap"],
        &rows,
    )?;
    ctx.wrote(&f);
    ctx.say(format!("gap decreasing: {}", report.gap_decreasing));
    Ok(())
}

fn ckls(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let c = &cfg.ckls;
    let seed = cfg.seeds.master;
    let path = match &cfg.data.path {
        Some(f) => {
            let loaded = load_series_csv(f, cfg.data.resample)?;
            if let Some(n) = &loaded.note {
                ctx.say(n);
            }
            loaded.into_path()?
        }
        None => {
            let grid = TimeGrid::new(0.0, c.horizon, c.n_steps)?;
            euler_maruyama(
                &ckls_model(c.true_theta),
                &CovariateSet::empty(grid),
                c.x0,
                &grid,
                rng::derive(seed, streams::PATH),
            )?
        }
    };
    let bounds: [(f64, f64); 4] = c.bounds.map(|[lo, hi]| (lo, hi));
    let mut reduced = bounds;
    reduced[1] = (0.0, 0.0);
    reduced[3] = (0.0, 0.0);
    let fits = [
        (
            "ckls",
            fit_ckls(
                &path,
                &bounds,
                &cfg.annealing,
                rng::derive(seed, streams::FIT),
            )?,
        ),
        (
            "reduced",
            fit_ckls(
                &path,
                &reduced,
                &cfg.annealing,
                rng::derive(seed, streams::FIT + 1),
            )?,
        ),
    ];
    let row = |name: &str, f: &FitResult| -> Vec<String> {
        let mut r = vec![name.to_string(), f.family.to_string()];
        r.extend(f.theta_hat.iter().map(|&t| fmt_f64(t)));
        r.extend([
            fmt_f64(f.neg_loglik),
            fmt_f64(f.bic),
            f.k.to_string(),
            f.n_obs.to_string(),
            seed.to_string(),
        ]);
        r
    };
    let rows: Vec<Vec<String>> = fits.iter().map(|(n, f)| row(n, f)).collect();
    let f = ctx.file("fit.csv");
    write_table(
        &f,
        &ctx.header,
        &[
            "model",
            "family",
            "theta1",
            "theta2",
            "theta3",
            "theta4",
            "neg_loglik",
            "bic",
            "k",
            "n_obs",
            "seed",
        ],
        &rows,
    )?;
    ctx.wrote(&f);
    let best = fits
        .iter()
        .min_by(|a, b| a.1.bic.total_cmp(&b.1.bic))
        .expect("two fits");
    ctx.say(format!("lowest BIC: {}", best.0));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
