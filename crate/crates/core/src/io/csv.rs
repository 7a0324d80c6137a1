//! CSV ingestion and output.
//!
//! Every file written here starts with one `#` comment line identifying the
//! tool version, seed and configuration digest. Readers skip `#` lines.
//! Floats are written with Rust's shortest round-trip formatting.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::sde::{CovariateSet, SamplePath, TimeGrid};

/// Relative tolerance on grid spacing for a series to count as uniform.
pub const UNIFORM_TOL: f64 = 1e-6;

/// `# sdebf <version> seed=<seed> config=<digest>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputHeader {
    pub seed: u64,
    pub config_digest: String,
}

impl OutputHeader {
    pub fn line(&self) -> String {
        format!(
            "# sdebf {} seed={} config={}",
            env!("CARGO_PKG_VERSION"),
            self.seed,
            self.config_digest
        )
    }
}

/// Write a headed CSV file.
pub fn write_table(
    path: &Path,
    header: &OutputHeader,
    columns: &[&str],
    rows: &[Vec<String>],
) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", header.line())?;
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    w.write_record(columns).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Path CSV: `t,x`.
pub fn write_path_csv(path: &Path, header: &OutputHeader, sample: &SamplePath) -> Result<()> {
    let grid = sample.grid();
    let rows: Vec<Vec<String>> = sample
        .values()
        .iter()
        .enumerate()
        .map(|(k, &x)| vec![fmt_f64(grid.time(k)), fmt_f64(x)])
        .collect();
    write_table(path, header, &["t", "x"], &rows)
}

/// Covariate CSV: `t,z1,…,zp` (raw series, before links).
pub fn write_covariates_csv(path: &Path, header: &OutputHeader, covs: &CovariateSet) -> Result<()> {
    let grid = covs.grid();
    let names: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=covs.p()).map(|l| format!("z{l}")))
        .collect();
    let cols: Vec<&str> = names.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = (0..grid.len())
        .map(|k| {
            std::iter::once(fmt_f64(grid.time(k)))
                .chain((0..covs.p()).map(|l| fmt_f64(covs.series(l)[k])))
                .collect()
        })
        .collect();
    write_table(path, header, &cols, &rows)
}

/// A table of series on a common uniform grid, read from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSeries {
    pub grid: TimeGrid,
    /// Value column names (the time column excluded).
    pub columns: Vec<String>,
    /// One vector per value column, each of length `grid.len()`.
    pub values: Vec<Vec<f64>>,
    /// Set when the input was irregular and has been linearly interpolated
    /// onto a uniform grid with the same number of points.
    pub resampled: bool,
    pub note: Option<String>,
}

impl LoadedSeries {
    /// The single value column as a path.
    pub fn into_path(self) -> Result<SamplePath> {
        if self.values.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "a path file needs exactly one value column, found {}",
                self.values.len()
            )));
        }
        SamplePath::new(
            self.grid,
            self.values.into_iter().next().expect("one column"),
        )
    }

    /// All value columns as identity-linked covariates.
    pub fn into_covariates(self) -> Result<CovariateSet> {
        CovariateSet::identity(self.grid, self.values)
    }
}

/// Read a headed CSV whose first column is time. Times must be strictly
/// increasing; the grid must be uniform unless `resample` is set, in which
/// case values are linearly interpolated onto a uniform grid over the same
/// range with the same number of points and the result is flagged.
pub fn load_series_csv(file: &Path, resample: bool) -> Result<LoadedSeries> {
    if !file.exists() {
        return Err(Error::MissingFile(file.to_path_buf()));
    }
    let name = file.display().to_string();
    let err = |message: String| Error::Csv {
        path: name.clone(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(file)
        .map_err(|e| err(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
    if headers.len() < 2 {
        return Err(err(
            "need a time column and at least one value column".into()
        ));
    }
    let columns: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut times = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); columns.len()];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let row = i + 1;
        if rec.len() != headers.len() {
            return Err(err(format!(
                "data row {row} has {} fields, expected {}",
                rec.len(),
                headers.len()
            )));
        }
        let parse = |j: usize| -> Result<f64> {
            let cell = &rec[j];
            let v: f64 = cell.parse().map_err(|_| {
                err(format!(
                    "data row {row}, column '{}': '{cell}' is not a number",
                    &headers[j]
                ))
            })?;
            if !v.is_finite() {
                return Err(err(format!(
                    "data row {row}, column '{}': non-finite value",
                    &headers[j]
                )));
            }
            Ok(v)
        };
        let t = parse(0)?;
        if let Some(&prev) = times.last() {
            if t == prev {
                return Err(err(format!("data row {row}: duplicated timestamp {t}")));
            }
            if t < prev {
                return Err(err(format!(
                    "data row {row}: time {t} decreases (previous {prev})"
                )));
            }
        }
        times.push(t);
        for (j, col) in values.iter_mut().enumerate() {
            col.push(parse(j + 1)?);
        }
    }
    if times.len() < 2 {
        return Err(err(format!(
            "need at least 2 data rows, found {}",
            times.len()
        )));
    }
    let n_steps = times.len() - 1;
    let (t0, t_end) = (times[0], times[n_steps]);
    let grid = TimeGrid::new(t0, t_end, n_steps)?;
    let dt = grid.dt();
    let max_dev = times
        .windows(2)
        .map(|w| ((w[1] - w[0]) - dt).abs() / dt)
        .fold(0.0, f64::max);
    if max_dev < UNIFORM_TOL {
        return Ok(LoadedSeries {
            grid,
            columns,
            values,
            resampled: false,
            note: None,
        });
    }
    if !resample {
        return Err(err(format!(
            "time grid is not uniform (max relative spacing deviation {max_dev:.3e}); enable resampling to interpolate"
        )));
    }
    let values = values
        .iter()
        .map(|col| interpolate(&times, col, &grid))
        .collect();
    Ok(LoadedSeries {
        grid,
        columns,
        values,
        resampled: true,
        note: Some(format!(
            "{name}: irregular times resampled by linear interpolation onto {} uniform points over [{t0}, {t_end}]",
            n_steps + 1
        )),
    })
}

fn interpolate(times: &[f64], ys: &[f64], grid: &TimeGrid) -> Vec<f64> {
    let mut j = 0;
    (0..grid.len())
        .map(|k| {
            let t = grid.time(k);
            while j + 2 < times.len() && times[j + 1] < t {
                j += 1;
            }
            let (ta, tb) = (times[j], times[j + 1]);
            let w = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
            ys[j] + w * (ys[j + 1] - ys[j])
        })
        .collect()
}
