//! Grid runner.
//!
//! Layout under the output directory:
//!
//! ```text
//! cells/<model>-m<minima>-s<shots>-seed<seed>-<hash>/
//!     manifest.json    every config needed to rerun the cell
//!     metrics.csv      one row per epoch
//!     checkpoint.bin   final (and optionally periodic) parameters
//!     report.json      written last; its presence marks the cell complete
//!     error.json       only for failed cells
//! eval_reports.csv
//! results_table.csv / results_table.txt
//! table_<model>.csv / table_<model>.txt   one transformer against mlp2
//! summary.json
//! ```
//!
//! The hash covers every input that influences the result, so changing any
//! setting moves the cell to a new directory and rerunning an unchanged
//! grid skips completed cells.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::config::RunConfig;
use crate::dataset::{build_dataset, SamplingConfig, Split};
use crate::evaluation::{
    across_epoch_mean, build_results_table, write_reports_csv, EvalError, EvalReport, ResultsTable,
};
use crate::models::{save_checkpoint, ModelConfig, ModelPreset};
use crate::training::{train_on, MetricsWriter, RunLabel, TrainConfig, TrainError};

pub const MANIFEST_VERSION: u32 = 1;
const HASH_CHARS: usize = 16;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("output directory {path} is not writable: {source}")]
    OutputDir {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GridError + '_ {
    move |source| GridError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One (model, minima, shots, seed) combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub model: ModelPreset,
    pub minima: usize,
    pub shots: usize,
    pub seed: u64,
}

/// Everything that determines a cell's result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub cell: Cell,
    pub model: ModelConfig,
    pub sampling: SamplingConfig,
    pub train: TrainConfig,
}

impl CellConfig {
    pub fn new(cell: Cell, run: &RunConfig) -> Self {
        let sampling = SamplingConfig {
            num_minima: cell.minima,
            num_shots: cell.shots,
            seed: cell.seed,
            ..run.sampling.clone()
        };
        let train = TrainConfig {
            seed: cell.seed,
            ..run.train.clone()
        };
        Self {
            cell,
            model: cell.model.config(sampling.context_length()),
            sampling,
            train,
        }
    }

    /// Hex prefix of the SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("configs serialise");
        let digest = hex::encode(Sha256::digest(&bytes));
        digest[..HASH_CHARS].to_string()
    }

    pub fn dir_name(&self) -> String {
        let c = &self.cell;
        format!(
            "{}-m{}-s{}-seed{}-{}",
            c.model,
            c.minima,
            c.shots,
            c.seed,
            self.hash()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub code_version: String,
    pub config_hash: String,
    pub config: CellConfig,
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Completed,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    pub config_hash: String,
    pub dir: PathBuf,
    pub status: CellStatus,
    pub eval_mse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub code_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub config: RunConfig,
    pub cells: Vec<CellResult>,
    pub completed: usize,
    pub skipped: usize,
    pub failed: usize,
}

impl GridSummary {
    pub fn success(&self) -> bool {
        self.failed == 0
    }
}

/// Cells in model, minima, shots, seed order.
pub fn grid_cells(run: &RunConfig) -> Vec<Cell> {
    let g = &run.grid;
    let mut cells = Vec::with_capacity(g.num_cells());
    for &model in &g.models {
        for &minima in &g.minima {
            for &shots in &g.shots {
                for &seed in &g.seeds {
                    cells.push(Cell {
                        model,
                        minima,
                        shots,
                        seed,
                    });
                }
            }
        }
    }
    cells
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), GridError> {
    let tmp = path.with_extension("tmp");
    let mut file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    file.write_all(bytes).map_err(io_err(&tmp))?;
    file.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), GridError> {
    write_atomic(path, &serde_json::to_vec_pretty(value)?)
}

fn ensure_writable(dir: &Path) -> Result<(), GridError> {
    let fail = |source| GridError::OutputDir {
        path: dir.to_path_buf(),
        source,
    };
    fs::create_dir_all(dir).map_err(fail)?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(fail)?;
    fs::remove_file(&probe).map_err(fail)
}

/// Report of a completed cell, if its directory holds one for this hash.
fn completed_report(dir: &Path, hash: &str) -> Option<EvalReport> {
    let manifest: Manifest =
        serde_json::from_slice(&fs::read(dir.join("manifest.json")).ok()?).ok()?;
    if manifest.config_hash != hash {
        return None;
    }
    serde_json::from_slice(&fs::read(dir.join("report.json")).ok()?).ok()
}

fn cell_label(config: &CellConfig) -> RunLabel {
    RunLabel {
        run_id: config.dir_name(),
        model_name: config.cell.model.name().to_string(),
    }
}

/// Train and evaluate one cell inside `dir`.
fn train_cell(
    config: &CellConfig,
    dir: &Path,
    checkpoint_every: usize,
    epsilon: Option<f64>,
) -> Result<EvalReport, String> {
    let train = build_dataset(&config.sampling, Split::Train).map_err(|e| e.to_string())?;
    let eval = build_dataset(&config.sampling, Split::Eval).map_err(|e| e.to_string())?;
    let metrics_path = dir.join("metrics.csv");
    let checkpoint_path = dir.join("checkpoint.bin");
    let mut writer = MetricsWriter::create(&metrics_path).map_err(|e| e.to_string())?;
    let mut side_error: Option<String> = None;
    let epochs = config.train.epochs;

    let outcome = train_on::<f32>(
        &config.model,
        &train,
        Some(&eval),
        &config.train,
        &cell_label(config),
        |row, params| {
            if side_error.is_some() {
                return;
            }
            if let Err(e) = writer.write(row) {
                side_error = Some(format!("writing metrics: {e}"));
            }
            if checkpoint_every > 0 && row.epoch % checkpoint_every == 0 && row.epoch != epochs {
                if let Err(e) = save_checkpoint(
                    &checkpoint_path,
                    params,
                    &config.model,
                    config.train.seed,
                    row.epoch,
                ) {
                    side_error = Some(format!("saving checkpoint: {e}"));
                }
            }
        },
    );
    let outcome = match outcome {
        Ok(o) => o,
        Err(TrainError::NonFiniteLoss { epoch, metrics }) => {
            return Err(format!(
                "non-finite training loss at epoch {epoch} after {} recorded epochs",
                metrics.len()
            ))
        }
        Err(e) => return Err(e.to_string()),
    };
    if let Some(e) = side_error {
        return Err(e);
    }
    save_checkpoint(
        &checkpoint_path,
        &outcome.params,
        &config.model,
        config.train.seed,
        epochs,
    )
    .map_err(|e| e.to_string())?;

    let last = outcome.metrics.last().ok_or("no epochs recorded")?;
    let eval_mse = last.eval_mse.ok_or("final epoch has no evaluation")?;
    let c = config.cell;
    let mut report = EvalReport::new(c.model.name(), c.minima, c.shots, eval_mse, c.seed);
    report.train_mse_epoch_mean = across_epoch_mean(&outcome.metrics);
    if let Some(eps) = epsilon {
        report = report.with_epsilon(eps);
    }
    Ok(report)
}

fn run_cell(config: &CellConfig, run: &RunConfig) -> (CellResult, Option<EvalReport>) {
    let hash = config.hash();
    let dir = run.grid.output_dir.join("cells").join(config.dir_name());
    let mut result = CellResult {
        cell: config.cell,
        config_hash: hash.clone(),
        dir: dir.clone(),
        status: CellStatus::Skipped,
        eval_mse: None,
        error: None,
    };
    if let Some(mut report) = completed_report(&dir, &hash) {
        // The threshold is report-time only, so it is not part of the hash.
        report.epsilon = None;
        report.learned = None;
        if let Some(eps) = run.grid.epsilon {
            report = report.with_epsilon(eps);
        }
        result.eval_mse = Some(report.eval_mse);
        return (result, Some(report));
    }

    let attempt = || -> Result<EvalReport, String> {
        fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let _ = fs::remove_file(dir.join("error.json"));
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: hash.clone(),
            config: config.clone(),
            checkpoint_every: run.grid.checkpoint_every,
        };
        write_json(&dir.join("manifest.json"), &manifest).map_err(|e| e.to_string())?;
        let report = train_cell(config, &dir, run.grid.checkpoint_every, run.grid.epsilon)?;
        write_json(&dir.join("report.json"), &report).map_err(|e| e.to_string())?;
        Ok(report)
    };
    match attempt() {
        Ok(report) => {
            result.status = CellStatus::Completed;
            result.eval_mse = Some(report.eval_mse);
            (result, Some(report))
        }
        Err(message) => {
            if dir.is_dir() {
                let _ = write_json(
                    &dir.join("error.json"),
                    &serde_json::json!({ "error": message }),
                );
            }
            result.status = CellStatus::Failed;
            result.error = Some(message);
            (result, None)
        }
    }
}

/// Write the combined table and one table per transformer paired with the
/// MLP baseline.
pub fn write_tables(dir: &Path, reports: &[EvalReport]) -> Result<ResultsTable, GridError> {
    let table = build_results_table(reports)?;
    let put = |name: &str, table: &ResultsTable| -> Result<(), GridError> {
        write_atomic(&dir.join(format!("{name}.csv")), table.to_csv().as_bytes())?;
        write_atomic(&dir.join(format!("{name}.txt")), table.to_text().as_bytes())
    };
    put("results_table", &table)?;
    let baseline = ModelPreset::Mlp2.name();
    for preset in ModelPreset::ALL {
        if preset == ModelPreset::Mlp2 {
            continue;
        }
        let paired: Vec<EvalReport> = reports
            .iter()
            .filter(|r| r.model_name == preset.name() || r.model_name == baseline)
            .cloned()
            .collect();
        if paired.iter().any(|r| r.model_name == preset.name()) {
            put(&format!("table_{preset}"), &build_results_table(&paired)?)?;
        }
    }
    Ok(table)
}

/// A finished cell and its report, if it produced one.
type CellOutcome = (CellResult, Option<EvalReport>);

/// Run every cell of the grid, then assemble reports and tables.
///
/// Per-cell failures are recorded in the summary and do not stop other
/// cells; only problems with the output directory itself are errors.
pub fn run_grid(
    run: &RunConfig,
    mut progress: impl FnMut(&CellResult) + Send,
) -> Result<GridSummary, GridError> {
    let out = &run.grid.output_dir;
    ensure_writable(out)?;
    let started_unix = unix_now();
    let configs: Vec<CellConfig> = grid_cells(run)
        .into_iter()
        .map(|cell| CellConfig::new(cell, run))
        .collect();

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<CellOutcome>>> = Mutex::new(vec![None; configs.len()]);
    let progress = Mutex::new(&mut progress);
    let workers = run.grid.workers.min(configs.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(config) = configs.get(i) else { break };
                let outcome = run_cell(config, run);
                (progress.lock().unwrap())(&outcome.0);
                slots.lock().unwrap()[i] = Some(outcome);
            });
        }
    });

    let mut cells = Vec::with_capacity(configs.len());
    let mut reports = Vec::new();
    for (result, report) in slots.into_inner().unwrap().into_iter().flatten() {
        cells.push(result);
        reports.extend(report);
    }
    write_reports_csv(&out.join("eval_reports.csv"), &reports)?;
    write_tables(out, &reports)?;

    let count = |s: CellStatus| cells.iter().filter(|c| c.status == s).count();
    let summary = GridSummary {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix,
        finished_unix: unix_now(),
        config: run.clone(),
        completed: count(CellStatus::Completed),
        skipped: count(CellStatus::Skipped),
        failed: count(CellStatus::Failed),
        cells,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Directories under `<output>/cells`, sorted by name.
pub fn cell_dirs(output_dir: &Path) -> Result<Vec<PathBuf>, GridError> {
    let root = output_dir.join("cells");
    if !root.is_dir() {
        return Ok(Vec::new());
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(&root)
        .map_err(io_err(&root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}
