//! Function grids and figure data.
//!
//! Function CSVs have the header `x,y`. Next to each one a
//! `<stem>.minima.csv` with the same header lists the prescribed minima, so
//! a plot can mark them without recomputing anything.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::grid::cell_dirs;
use crate::dataset::{derive_seed, sample_minima_spec, DatasetError, SamplingConfig};
use crate::fungen::{FunctionError, GeneratedFunction, MinimaSpec};
use crate::training::{read_metrics, MetricsRow};

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("resolution must be at least 1 point")]
    ZeroResolution,
    #[error("invalid range [{low}, {high}]: need finite low < high")]
    InvalidRange { low: f64, high: f64 },
    #[error(transparent)]
    Function(#[from] FunctionError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("no metrics found under {0}")]
    NoMetrics(PathBuf),
}

/// `resolution` evenly spaced points from `low` to `high` inclusive.
pub fn uniform_grid(low: f64, high: f64, resolution: usize) -> Result<Vec<f64>, DumpError> {
    if resolution == 0 {
        return Err(DumpError::ZeroResolution);
    }
    if !(low.is_finite() && high.is_finite() && low < high) {
        return Err(DumpError::InvalidRange { low, high });
    }
    if resolution == 1 {
        return Ok(vec![low]);
    }
    let step = (high - low) / (resolution - 1) as f64;
    Ok((0..resolution)
        .map(|i| {
            if i + 1 == resolution {
                high
            } else {
                low + step * i as f64
            }
        })
        .collect())
}

/// `(x, f(x))` over a uniform grid.
pub fn dump_function(
    spec: &MinimaSpec,
    low: f64,
    high: f64,
    resolution: usize,
) -> Result<Vec<(f64, f64)>, DumpError> {
    let xs = uniform_grid(low, high, resolution)?;
    let function = GeneratedFunction::new(spec.clone())?;
    let ys = function.eval_batch(&xs);
    Ok(xs.into_iter().zip(ys).collect())
}

pub fn write_points<W: std::io::Write>(writer: W, points: &[(f64, f64)]) -> Result<(), DumpError> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["x", "y"])?;
    for (x, y) in points {
        csv.write_record([x.to_string(), y.to_string()])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn minima_path(csv_path: &Path) -> PathBuf {
    let stem = csv_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("function");
    csv_path.with_file_name(format!("{stem}.minima.csv"))
}

/// Write the grid to `path` and the prescribed minima beside it.
pub fn write_function_csv(
    path: &Path,
    spec: &MinimaSpec,
    points: &[(f64, f64)],
) -> Result<(), DumpError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    write_points(std::fs::File::create(path)?, points)?;
    let minima: Vec<(f64, f64)> = spec.pairs().collect();
    write_points(std::fs::File::create(minima_path(path))?, &minima)
}

/// Random spec with `num_minima` minima from the default sampling setup.
pub fn random_spec(num_minima: usize, seed: u64) -> Result<MinimaSpec, DumpError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_minima_spec(
        num_minima,
        &mut rng,
        &SamplingConfig::default(),
    )?)
}

/// Files written by [`write_plot_data`].
#[derive(Debug, Default)]
pub struct PlotData {
    pub loss_files: Vec<PathBuf>,
    pub function_files: Vec<PathBuf>,
}

/// Figure inputs for a finished grid under `output_dir`:
///
/// - `plot_data/loss_<model>.csv`: the metrics of every cell of one
///   transformer followed by those of the mlp2 baseline, in the metrics
///   schema, one file per transformer.
/// - `plot_data/functions/minima<n>.csv` for one to four minima on
///   `[-3, 3]`, each with its `.minima.csv`.
pub fn write_plot_data(
    output_dir: &Path,
    seed: u64,
    resolution: usize,
) -> Result<PlotData, DumpError> {
    let dest = output_dir.join("plot_data");
    std::fs::create_dir_all(dest.join("functions"))?;
    let dirs = cell_dirs(output_dir).map_err(|e| std::io::Error::other(e.to_string()))?;
    let mut rows: Vec<MetricsRow> = Vec::new();
    for dir in dirs {
        let path = dir.join("metrics.csv");
        if path.is_file() {
            rows.extend(read_metrics(&path)?);
        }
    }
    if rows.is_empty() {
        return Err(DumpError::NoMetrics(output_dir.to_path_buf()));
    }

    let mut out = PlotData::default();
    let mut models: Vec<&str> = rows.iter().map(|r| r.model_name.as_str()).collect();
    models.sort();
    models.dedup();
    for model in models.into_iter().filter(|&m| m != "mlp2") {
        let path = dest.join(format!("loss_{model}.csv"));
        let mut csv = csv::Writer::from_path(&path)?;
        for row in rows.iter().filter(|r| r.model_name == model) {
            csv.serialize(row)?;
        }
        for row in rows.iter().filter(|r| r.model_name == "mlp2") {
            csv.serialize(row)?;
        }
        csv.flush()?;
        out.loss_files.push(path);
    }

    for n in 1..=4 {
        let spec = random_spec(n, derive_seed(seed, n as u64))?;
        let points = dump_function(&spec, -3.0, 3.0, resolution)?;
        let path = dest.join("functions").join(format!("minima{n}.csv"));
        write_function_csv(&path, &spec, &points)?;
        out.function_files.push(path);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_minimum_seven_points() {
        let spec = MinimaSpec::new(vec![0.0], vec![0.0]).unwrap();
        let points = dump_function(&spec, -3.0, 3.0, 7).unwrap();
        let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
        assert_eq!(xs, vec![-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0]);
        assert_eq!(ys, vec![1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_resolution_rejected() {
        let spec = MinimaSpec::new(vec![0.0], vec![0.0]).unwrap();
        assert!(matches!(
            dump_function(&spec, -3.0, 3.0, 0),
            Err(DumpError::ZeroResolution)
        ));
        assert!(matches!(
            dump_function(&spec, 3.0, -3.0, 5),
            Err(DumpError::InvalidRange { .. })
        ));
    }

    #[test]
    fn four_random_minima_hit_prescribed_values() {
        let spec = random_spec(4, 11).unwrap();
        let mut xs = uniform_grid(-3.0, 3.0, 301).unwrap();
        xs.extend(spec.locations.iter().copied());
        let function = GeneratedFunction::new(spec.clone()).unwrap();
        let ys = function.eval_batch(&xs);
        let curve_min = ys.iter().copied().fold(f64::INFINITY, f64::min);
        let prescribed_min = spec.values.iter().copied().fold(f64::INFINITY, f64::min);
        assert!((curve_min - prescribed_min).abs() <= 1e-12);
        for (a, y) in spec.pairs() {
            assert!((function.eval(a) - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn csv_and_sidecar_written() {
        let dir = tempfile::tempdir().unwrap();
        let spec = MinimaSpec::new(vec![-1.0, 1.0], vec![0.5, -0.5]).unwrap();
        let points = dump_function(&spec, -3.0, 3.0, 13).unwrap();
        let path = dir.path().join("f.csv");
        write_function_csv(&path, &spec, &points).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 14);
        assert!(text.starts_with("x,y\n"));
        let minima = std::fs::read_to_string(minima_path(&path)).unwrap();
        assert_eq!(minima, "x,y\n-1,0.5\n1,-0.5\n");
    }
}
