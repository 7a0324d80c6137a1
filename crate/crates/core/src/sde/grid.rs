use crate::error::{Error, Result};

/// Uniform time grid `t0 + k * dt`, `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t0.is_finite() && t_end.is_finite()) {
            return Err(Error::InvalidGrid("endpoints must be finite".into()));
        }
        if t_end <= t0 {
            return Err(Error::InvalidGrid(format!(
                "t_end ({t_end}) must exceed t0 ({t0})"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidGrid("n_steps must be at least 1".into()));
        }
        Ok(Self { t0, t_end, n_steps })
    }

    /// Grid on `[0, horizon]` with spacing as close as possible to `1 / steps_per_unit`.
    pub fn with_horizon(horizon: f64, steps_per_unit: usize) -> Result<Self> {
        let n = (horizon * steps_per_unit as f64).round() as usize;
        Self::new(0.0, horizon, n.max(1))
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of grid points, `n_steps + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.n_steps as f64
    }

    pub fn horizon(&self) -> f64 {
        self.t_end - self.t0
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_end
        } else {
            self.t0 + k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(move |k| self.time(k))
    }

    pub(crate) fn check_index(&self, k: usize) -> Result<()> {
        if k > self.n_steps {
            return Err(Error::IndexOutOfRange {
                index: k,
                n_steps: self.n_steps,
            });
        }
        Ok(())
    }

    pub fn ensure_same(&self, other: &TimeGrid, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "{what}: [{}, {}]/{} vs [{}, {}]/{}",
                self.t0, self.t_end, self.n_steps, other.t0, other.t_end, other.n_steps
            )));
        }
        Ok(())
    }
}

/// A realization of one individual's process on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl SamplePath {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "path has {} values, grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(step) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn x0(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        self.values[self.grid.n_steps()]
    }
}
