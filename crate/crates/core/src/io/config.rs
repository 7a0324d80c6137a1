//! Experiment configuration (TOML).
//!
//! Every section is optional and falls back to the defaults of the
//! single-individual covariate-selection study. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimation::AnnealingSchedule;
use crate::sde::{DiffusionFamily, DiffusionSpec, DriftFamily, TimeGrid};
use crate::selection::parse_mask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub t0: f64,
    pub horizon: f64,
    pub n_steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            t0: 0.0,
            horizon: 5.0,
            n_steps: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub family: String,
    pub diffusion: String,
    pub diffusion_params: Vec<f64>,
    pub x0: f64,
    /// Covariates of the data-generating model, as a bitstring like `"111"`.
    /// Empty means all covariates.
    pub true_mask: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: "linear-affine".into(),
            diffusion: "constant".into(),
            diffusion_params: vec![20.0],
            x0: 0.0,
            true_mask: String::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovariateSource {
    /// The three benchmark covariate SDEs with random coefficients.
    Paper,
    Csv,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovariateConfig {
    pub source: CovariateSource,
    /// Standard deviation of the benchmark covariate SDE coefficients.
    pub coef_sd: f64,
    pub standardize: bool,
    pub path: Option<PathBuf>,
    pub resample: bool,
}

impl Default for CovariateConfig {
    fn default() -> Self {
        Self {
            source: CovariateSource::Paper,
            coef_sd: 0.01,
            standardize: true,
            path: None,
            resample: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruthConfig {
    /// Explicit `θ0 = (β, ξ)` for the true mask; drawn at random when absent.
    pub theta: Option<Vec<f64>>,
    pub mean_sd: f64,
    pub jitter_sd: f64,
}

impl Default for TruthConfig {
    fn default() -> Self {
        Self {
            theta: None,
            mean_sd: 1.0,
            jitter_sd: 0.001,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorKind {
    MleNormal,
    PointMassTruth,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Comparison {
    /// Bayes factor of each candidate against the true parameters.
    Ratio,
    /// Marginal likelihood of each candidate.
    Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub kind: PriorKind,
    pub sd: f64,
    /// Half-width of the MLE search box and of the uniform prior.
    pub bound: f64,
    pub comparison: Comparison,
    /// Rebuild data-dependent priors from every replicate's own path rather
    /// than once from a reference path.
    pub refit_per_replicate: bool,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            kind: PriorKind::MleNormal,
            sd: 0.8,
            bound: 10.0,
            comparison: Comparison::Ratio,
            refit_per_replicate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub prior_draws: usize,
    pub replications: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            prior_draws: 500,
            replications: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    /// Number of individuals; above 1 `select` runs a system study.
    pub individuals: usize,
    /// `σ_i = σ_1 + i · sigma_step`.
    pub sigma_step: f64,
    pub wrong_combinations: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            individuals: 1,
            sigma_step: 5.0,
            wrong_combinations: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedConfig {
    pub master: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self { master: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Observed path (`t,x`); simulated from the true model when absent.
    pub path: Option<PathBuf>,
    pub resample: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub horizons: Vec<f64>,
    pub steps_per_unit: usize,
    pub eta0: f64,
    /// Uniform prior range of `η1`.
    pub eta1_lo: f64,
    pub eta1_hi: f64,
    pub sigma: f64,
    pub replications: usize,
    pub prior_draws: usize,
    pub variance_floor_fraction: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            horizons: vec![5.0, 20.0, 80.0],
            steps_per_unit: 100,
            eta0: 1.0,
            eta1_lo: 3.0,
            eta1_hi: 5.0,
            sigma: 1.0,
            replications: 200,
            prior_draws: 20_000,
            variance_floor_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CklsSection {
    /// Parameters used to simulate data when no `[data] path` is given.
    pub true_theta: [f64; 4],
    pub horizon: f64,
    pub n_steps: usize,
    pub x0: f64,
    pub bounds: [[f64; 2]; 4],
}

impl Default for CklsSection {
    fn default() -> Self {
        Self {
            true_theta: [0.1, -0.2, 0.5, 0.7],
            horizon: 80.0,
            n_steps: 16_000,
            x0: 0.5,
            bounds: [[-1.0, 1.0], [-2.0, 1.0], [0.01, 2.0], [0.0, 1.5]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub model: ModelConfig,
    pub covariates: CovariateConfig,
    pub truth: TruthConfig,
    pub prior: PriorConfig,
    pub mc: McConfig,
    pub system: SystemConfig,
    pub annealing: AnnealingSchedule,
    pub seeds: SeedConfig,
    pub output: OutputConfig,
    pub data: DataConfig,
    pub sweep: SweepSection,
    pub ckls: CklsSection,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| cfg_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load and validate; relative file paths inside are resolved against
    /// the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.covariates.path, &mut cfg.data.path]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.check_files()?;
        Ok(cfg)
    }

    /// Canonical serialization.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| cfg_err(e.to_string()))
    }

    /// First 12 hex digits of the SHA-256 of the canonical serialization,
    /// with the output directory left out so the digest names the
    /// experiment rather than where its results go.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        let text = c.to_toml().unwrap_or_default();
        let hash = Sha256::digest(text.as_bytes());
        hex::encode(hash)[..12].to_string()
    }

    pub fn check_files(&self) -> Result<()> {
        for p in [&self.covariates.path, &self.data.path]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return Err(Error::MissingFile(p.clone()));
            }
        }
        if self.covariates.source == CovariateSource::Csv && self.covariates.path.is_none() {
            return Err(cfg_err(
                "covariates.source = \"csv\" requires covariates.path",
            ));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if !(g.horizon > 0.0 && g.horizon.is_finite() && g.t0.is_finite()) || g.n_steps == 0 {
            return Err(cfg_err(
                "grid: horizon must be positive and n_steps at least 1",
            ));
        }
        self.drift_family()?;
        self.diffusion()?;
        self.true_mask(3)?;
        let c = &self.covariates;
        if !(c.coef_sd >= 0.0 && c.coef_sd.is_finite()) {
            return Err(cfg_err("covariates.coef_sd must be non-negative"));
        }
        let t = &self.truth;
        if !(t.mean_sd >= 0.0 && t.jitter_sd >= 0.0) {
            return Err(cfg_err("truth: standard deviations must be non-negative"));
        }
        let p = &self.prior;
        if !(p.sd > 0.0 && p.sd.is_finite()) || !(p.bound > 0.0 && p.bound.is_finite()) {
            return Err(cfg_err("prior: sd and bound must be positive"));
        }
        if self.mc.prior_draws == 0 || self.mc.replications == 0 {
            return Err(cfg_err(
                "mc: prior_draws and replications must be at least 1",
            ));
        }
        if self.system.individuals == 0 {
            return Err(cfg_err("system.individuals must be at least 1"));
        }
        self.annealing
            .validate()
            .map_err(|e| cfg_err(e.to_string()))?;
        let s = &self.sweep;
        if s.horizons.is_empty()
            || s.horizons.iter().any(|h| !(*h > 0.0))
            || s.steps_per_unit == 0
            || s.replications == 0
            || s.prior_draws == 0
            || !(s.eta1_lo <= s.eta1_hi)
            || !(s.sigma > 0.0)
        {
            return Err(cfg_err(
                "sweep: invalid horizons, counts, η1 range or sigma",
            ));
        }
        let k = &self.ckls;
        if !(k.horizon > 0.0)
            || k.n_steps == 0
            || k.bounds.iter().any(|b| !(b[0] <= b[1]))
            || !(k.bounds[2][0] > 0.0)
        {
            return Err(cfg_err("ckls: invalid horizon, n_steps or bounds"));
        }
        Ok(())
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(
            self.grid.t0,
            self.grid.t0 + self.grid.horizon,
            self.grid.n_steps,
        )
    }

    pub fn drift_family(&self) -> Result<DriftFamily> {
        self.model
            .family
            .parse()
            .map_err(|e: Error| cfg_err(format!("model.family: {e}")))
    }

    pub fn diffusion(&self) -> Result<DiffusionSpec> {
        let fam: DiffusionFamily = self
            .model
            .diffusion
            .parse()
            .map_err(|e: Error| cfg_err(format!("model.diffusion: {e}")))?;
        DiffusionSpec::new(fam, self.model.diffusion_params.clone())
            .map_err(|e| cfg_err(format!("model.diffusion_params: {e}")))
    }

    /// The true mask for `p` covariates (all ones when unset).
    pub fn true_mask(&self, p: usize) -> Result<Vec<bool>> {
        if self.model.true_mask.is_empty() {
            return Ok(vec![true; p]);
        }
        let m = parse_mask(&self.model.true_mask).map_err(|e| cfg_err(e.to_string()))?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml().unwrap(), text);
        assert_eq!(back.digest(), cfg.digest());
    }

    #[test]
    fn partial_file_and_canonical_form() {
        let cfg =
            ExperimentConfig::from_toml("[mc]\nreplications = 3\n[prior]\nkind = \"uniform\"\n")
                .unwrap();
        assert_eq!(cfg.mc.replications, 3);
        assert_eq!(cfg.mc.prior_draws, 500);
        assert_eq!(cfg.prior.kind, PriorKind::Uniform);
        let canon = cfg.to_toml().unwrap();
        assert_eq!(
            ExperimentConfig::from_toml(&canon)
                .unwrap()
                .to_toml()
                .unwrap(),
            canon
        );
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            ExperimentConfig::from_toml("[mc]\ndraws = 3\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml("[nope]\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn range_checks() {
        for bad in [
            "[grid]\nn_steps = 0\n",
            "[prior]\nsd = -1.0\n",
            "[model]\nfamily = \"quadratic\"\n",
            "[model]\ntrue_mask = \"1x1\"\n",
            "[annealing]\ncooling = 1.5\n",
            "[mc]\nprior_draws = 0\n",
        ] {
            assert!(
                matches!(ExperimentConfig::from_toml(bad), Err(Error::Config(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn missing_files() {
        assert!(matches!(
            ExperimentConfig::load(Path::new("/definitely/not/here.toml")),
            Err(Error::MissingFile(_))
        ));
        let d = tempfile::tempdir().unwrap();
        let f = d.path().join("c.toml");
        std::fs::write(&f, "[data]\npath = \"nope.csv\"\n").unwrap();
        let e = ExperimentConfig::load(&f).unwrap_err();
        assert!(e.is_config());
        assert!(e.to_string().contains("nope.csv"));
    }
}
