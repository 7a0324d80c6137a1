use std::fmt;
use std::sync::Arc;

use super::grid::TimeGrid;
use crate::error::{Error, Result};
use crate::numeric::compensated_sum;

/// Link `g_l` applied to a covariate before it enters the drift factor.
#[derive(Clone, Default)]
pub enum Link {
    #[default]
    Identity,
    /// Clamp to `[lo, hi]`; models a compact covariate range.
    Clamp { lo: f64, hi: f64 },
    /// A user-registered continuous map. Non-finite output means "undefined".
    Custom {
        name: String,
        map: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl Link {
    pub fn custom(
        name: impl Into<String>,
        map: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Link::Custom {
            name: name.into(),
            map: Arc::new(map),
        }
    }

    pub fn apply(&self, z: f64) -> f64 {
        match self {
            Link::Identity => z,
            Link::Clamp { lo, hi } => z.clamp(*lo, *hi),
            Link::Custom { map, .. } => map(z),
        }
    }
}

impl fmt::Debug for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Link::Identity => write!(f, "Identity"),
            Link::Clamp { lo, hi } => write!(f, "Clamp[{lo}, {hi}]"),
            Link::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

/// `p` covariate trajectories observed on a common grid, with their links.
///
/// Linked values `g_l(z_l(t_k))` are computed once at construction; a link
/// that is undefined anywhere on the observed range is rejected there.
#[derive(Debug, Clone)]
pub struct CovariateSet {
    grid: TimeGrid,
    series: Vec<Vec<f64>>,
    links: Vec<Link>,
    linked: Vec<Vec<f64>>,
    standardized: bool,
}

impl CovariateSet {
    pub fn new(grid: TimeGrid, series: Vec<Vec<f64>>, links: Vec<Link>) -> Result<Self> {
        if links.len() != series.len() {
            return Err(Error::Arity(format!(
                "{} covariate series but {} links",
                series.len(),
                links.len()
            )));
        }
        for (l, s) in series.iter().enumerate() {
            if s.len() != grid.len() {
                return Err(Error::GridMismatch(format!(
                    "covariate {l} has {} values, grid has {} points",
                    s.len(),
                    grid.len()
                )));
            }
            if let Some(step) = s.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { step });
            }
        }
        let linked = series
            .iter()
            .zip(&links)
            .enumerate()
            .map(|(l, (s, link))| {
                s.iter()
                    .map(|&z| {
                        let g = link.apply(z);
                        if g.is_finite() {
                            Ok(g)
                        } else {
                            Err(Error::LinkUndefined {
                                covariate: l,
                                value: z,
                            })
                        }
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            series,
            links,
            linked,
            standardized: false,
        })
    }

    /// All-identity links.
    pub fn identity(grid: TimeGrid, series: Vec<Vec<f64>>) -> Result<Self> {
        let links = vec![Link::Identity; series.len()];
        Self::new(grid, series, links)
    }

    /// The covariate set with no covariates (`p = 0`).
    pub fn empty(grid: TimeGrid) -> Self {
        Self {
            grid,
            series: Vec::new(),
            links: Vec::new(),
            linked: Vec::new(),
            standardized: false,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn p(&self) -> usize {
        self.series.len()
    }

    pub fn series(&self, l: usize) -> &[f64] {
        &self.series[l]
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    /// `g_l(z_l(t_k))`.
    #[inline]
    pub fn linked(&self, l: usize, k: usize) -> f64 {
        self.linked[l][k]
    }

    pub fn linked_series(&self, l: usize) -> &[f64] {
        &self.linked[l]
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Replace the links, re-validating them on the observed range.
    pub fn with_links(&self, links: Vec<Link>) -> Result<Self> {
        let mut out = Self::new(self.grid, self.series.clone(), links)?;
        out.standardized = self.standardized;
        Ok(out)
    }

    /// Standardize every series to empirical mean 0 and variance 1 over the
    /// grid points, using the population (`1/N`) variance.
    pub fn standardize(&self) -> Result<Self> {
        let n = self.grid.len() as f64;
        let series = self
            .series
            .iter()
            .enumerate()
            .map(|(index, s)| {
                let mean = compensated_sum(s.iter().copied()) / n;
                let var = compensated_sum(s.iter().map(|z| (z - mean) * (z - mean))) / n;
                let sd = var.sqrt();
                if !(sd > 0.0) || sd <= f64::EPSILON * mean.abs() {
                    return Err(Error::DegenerateCovariate { index });
                }
                Ok(s.iter().map(|z| (z - mean) / sd).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = Self::new(self.grid, series, self.links.clone())?;
        out.standardized = true;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(0.0, n as f64, n).unwrap()
    }

    #[test]
    fn standardize_uses_population_variance() {
        let c = CovariateSet::identity(grid(2), vec![vec![1.0, 2.0, 3.0]]).unwrap();
        let s = c.standardize().unwrap();
        let expected = 1.5f64.sqrt();
        assert!((s.series(0)[0] + expected).abs() < 1e-12);
        assert_eq!(s.series(0)[1], 0.0);
        assert!((s.series(0)[2] - expected).abs() < 1e-12);
        assert!(s.is_standardized());
    }

    #[test]
    fn standardize_is_idempotent() {
        let c = CovariateSet::identity(grid(4), vec![vec![0.3, -1.0, 2.0, 5.5, 0.1]]).unwrap();
        let once = c.standardize().unwrap();
        let twice = once.standardize().unwrap();
        for (a, b) in once.series(0).iter().zip(twice.series(0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_series_cannot_be_standardized() {
        let c = CovariateSet::identity(grid(2), vec![vec![1.0, 2.0, 3.0], vec![4.0; 3]]).unwrap();
        assert!(matches!(
            c.standardize(),
            Err(Error::DegenerateCovariate { index: 1 })
        ));
    }

    #[test]
    fn undefined_link_is_reported() {
        let log = Link::custom("log", f64::ln);
        let err = CovariateSet::new(grid(2), vec![vec![1.0, 0.5, -1.0]], vec![log]).unwrap_err();
        assert!(matches!(err, Error::LinkUndefined { covariate: 0, value } if value == -1.0));
    }

    #[test]
    fn clamp_link_bounds_values() {
        let c = CovariateSet::new(
            grid(2),
            vec![vec![-5.0, 0.5, 5.0]],
            vec![Link::Clamp { lo: -1.0, hi: 1.0 }],
        )
        .unwrap();
        assert_eq!(c.linked_series(0), &[-1.0, 0.5, 1.0]);
    }
}
