use std::fmt;
use std::str::FromStr;

use super::covariates::CovariateSet;
use crate::error::{Error, Result};

/// Drift families `b_β(t, x)`. Every family is linear in `β`, i.e.
/// `b_β(t, x) = Σ_m β_m h_m(t, x)` for a fixed basis `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DriftFamily {
    /// `β_a + β_b x`.
    LinearAffine,
    /// `θ1 + θ2 x`; same form as [`DriftFamily::LinearAffine`], kept separate
    /// so fitted CKLS models carry their own label.
    Ckls,
    /// `η σ(t, x)`, so that `b / σ ≡ η` (the constant-ratio family).
    ConstantRatio,
}

impl DriftFamily {
    pub fn arity(self) -> usize {
        match self {
            DriftFamily::LinearAffine | DriftFamily::Ckls => 2,
            DriftFamily::ConstantRatio => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DriftFamily::LinearAffine => "linear-affine",
            DriftFamily::Ckls => "ckls",
            DriftFamily::ConstantRatio => "constant-ratio",
        }
    }

    /// Basis values `h_m(t, x)`; `sigma` is `σ(t, x)` (only the
    /// constant-ratio family uses it).
    #[inline]
    pub(crate) fn basis(self, x: f64, sigma: f64) -> [f64; 2] {
        match self {
            DriftFamily::LinearAffine | DriftFamily::Ckls => [1.0, x],
            DriftFamily::ConstantRatio => [sigma, 0.0],
        }
    }
}

impl fmt::Display for DriftFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DriftFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear-affine" => Ok(DriftFamily::LinearAffine),
            "ckls" => Ok(DriftFamily::Ckls),
            "constant-ratio" => Ok(DriftFamily::ConstantRatio),
            other => Err(Error::Config(format!("unknown drift family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftSpec {
    pub family: DriftFamily,
    pub beta: Vec<f64>,
}

impl DriftSpec {
    pub fn new(family: DriftFamily, beta: Vec<f64>) -> Result<Self> {
        if beta.len() != family.arity() {
            return Err(Error::Arity(format!(
                "{family} drift takes {} parameters, got {}",
                family.arity(),
                beta.len()
            )));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument(
                "drift parameters must be finite".into(),
            ));
        }
        Ok(Self { family, beta })
    }

    pub fn linear_affine(a: f64, b: f64) -> Self {
        Self {
            family: DriftFamily::LinearAffine,
            beta: vec![a, b],
        }
    }

    pub fn constant_ratio(eta: f64) -> Self {
        Self {
            family: DriftFamily::ConstantRatio,
            beta: vec![eta],
        }
    }

    #[inline]
    pub fn eval(&self, x: f64, sigma: f64) -> f64 {
        let h = self.family.basis(x, sigma);
        self.beta.iter().zip(h).map(|(b, h)| b * h).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiffusionFamily {
    /// `σ(t, x) = σ`.
    Constant,
    /// `σ(t, x) = A x^B`.
    CklsPower,
}

impl DiffusionFamily {
    pub fn arity(self) -> usize {
        match self {
            DiffusionFamily::Constant => 1,
            DiffusionFamily::CklsPower => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DiffusionFamily::Constant => "constant",
            DiffusionFamily::CklsPower => "ckls-power",
        }
    }
}

impl FromStr for DiffusionFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(DiffusionFamily::Constant),
            "ckls-power" => Ok(DiffusionFamily::CklsPower),
            other => Err(Error::Config(format!("unknown diffusion family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSpec {
    pub family: DiffusionFamily,
    pub params: Vec<f64>,
}

impl DiffusionSpec {
    pub fn new(family: DiffusionFamily, params: Vec<f64>) -> Result<Self> {
        if params.len() != family.arity() {
            return Err(Error::Arity(format!(
                "{} diffusion takes {} parameters, got {}",
                family.name(),
                family.arity(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument(
                "diffusion parameters must be finite".into(),
            ));
        }
        Ok(Self { family, params })
    }

    pub fn constant(sigma: f64) -> Self {
        Self {
            family: DiffusionFamily::Constant,
            params: vec![sigma],
        }
    }

    pub fn ckls(a: f64, b: f64) -> Self {
        Self {
            family: DiffusionFamily::CklsPower,
            params: vec![a, b],
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self.family {
            DiffusionFamily::Constant => self.params[0],
            DiffusionFamily::CklsPower => {
                let b = self.params[1];
                if b == 0.0 {
                    self.params[0]
                } else {
                    self.params[0] * x.powf(b)
                }
            }
        }
    }
}

/// `φ_ξ(t_k) = ξ0 + Σ_{l: mask_l} ξ_l g_l(z_l(t_k))` for a coefficient vector
/// holding the intercept followed by one coefficient per included covariate.
#[inline]
pub(crate) fn phi_raw(xi: &[f64], mask: &[bool], covs: &CovariateSet, k: usize) -> f64 {
    let mut acc = xi[0];
    let mut j = 1;
    for (l, &on) in mask.iter().enumerate() {
        if on {
            acc += xi[j] * covs.linked(l, k);
            j += 1;
        }
    }
    acc
}

/// Checked evaluation of the covariate drift factor.
pub fn phi_at(xi: &[f64], mask: &[bool], covs: &CovariateSet, k: usize) -> Result<f64> {
    check_xi(xi, mask)?;
    if mask.len() != covs.p() {
        return Err(Error::MaskMismatch {
            mask: mask.len(),
            covariates: covs.p(),
        });
    }
    covs.grid().check_index(k)?;
    Ok(phi_raw(xi, mask, covs, k))
}

fn check_xi(xi: &[f64], mask: &[bool]) -> Result<()> {
    let expected = 1 + mask.iter().filter(|&&m| m).count();
    if xi.len() != expected {
        return Err(Error::Arity(format!(
            "mask includes {} covariates so xi needs {expected} entries, got {}",
            expected - 1,
            xi.len()
        )));
    }
    Ok(())
}

/// A candidate or true model: drift `φ_ξ(t) b_β(t, x)` and diffusion `σ(t, x)`.
///
/// The parameter vector `θ = (β, ξ)` concatenates the drift parameters and
/// the covariate coefficients (intercept first, then included covariates in
/// mask order).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub drift: DriftSpec,
    pub diffusion: DiffusionSpec,
    pub mask: Vec<bool>,
    pub xi: Vec<f64>,
}

impl ModelSpec {
    pub fn new(
        drift: DriftSpec,
        diffusion: DiffusionSpec,
        mask: Vec<bool>,
        xi: Vec<f64>,
    ) -> Result<Self> {
        check_xi(&xi, &mask)?;
        Ok(Self {
            drift,
            diffusion,
            mask,
            xi,
        })
    }

    /// Model with no covariates and `φ ≡ 1`.
    pub fn without_covariates(drift: DriftSpec, diffusion: DiffusionSpec) -> Self {
        Self {
            drift,
            diffusion,
            mask: Vec::new(),
            xi: vec![1.0],
        }
    }

    pub fn included(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Length of `θ = (β, ξ)`.
    pub fn n_params(&self) -> usize {
        self.drift.family.arity() + 1 + self.included()
    }

    pub fn theta(&self) -> Vec<f64> {
        self.drift.beta.iter().chain(&self.xi).copied().collect()
    }

    /// Same family, diffusion and mask with parameters replaced by `theta`.
    pub fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.n_params() {
            return Err(Error::Arity(format!(
                "model takes {} parameters, got {}",
                self.n_params(),
                theta.len()
            )));
        }
        let nb = self.drift.family.arity();
        Ok(Self {
            drift: DriftSpec {
                family: self.drift.family,
                beta: theta[..nb].to_vec(),
            },
            diffusion: self.diffusion.clone(),
            mask: self.mask.clone(),
            xi: theta[nb..].to_vec(),
        })
    }

    /// Same family and diffusion with a different covariate mask; ξ is reset
    /// to an intercept of 1 and zero coefficients.
    pub fn with_mask(&self, mask: Vec<bool>) -> Self {
        let mut xi = vec![0.0; 1 + mask.iter().filter(|&&m| m).count()];
        xi[0] = 1.0;
        Self {
            drift: self.drift.clone(),
            diffusion: self.diffusion.clone(),
            mask,
            xi,
        }
    }

    pub fn check_covariates(&self, covs: &CovariateSet) -> Result<()> {
        check_xi(&self.xi, &self.mask)?;
        if self.mask.len() != covs.p() {
            return Err(Error::MaskMismatch {
                mask: self.mask.len(),
                covariates: covs.p(),
            });
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn phi_unchecked(&self, covs: &CovariateSet, k: usize) -> f64 {
        phi_raw(&self.xi, &self.mask, covs, k)
    }

    /// Drift `φ(t_k) b_β(t_k, x)` and diffusion `σ(t_k, x)` at grid index `k`.
    #[inline]
    pub(crate) fn coefficients(&self, covs: &CovariateSet, k: usize, x: f64) -> (f64, f64) {
        let sigma = self.diffusion.eval(x);
        let drift = self.phi_unchecked(covs, k) * self.drift.eval(x, sigma);
        (drift, sigma)
    }
}

/// Covariate drift factor at grid index `k`.
pub fn phi_eval(model: &ModelSpec, covs: &CovariateSet, k: usize) -> Result<f64> {
    phi_at(&model.xi, &model.mask, covs, k)
}
