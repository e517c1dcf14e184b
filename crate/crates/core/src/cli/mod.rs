//! Command-line front end: configuration, the grid runner and utilities.

pub mod config;
pub mod dump;
pub mod grid;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dataset::{build_dataset, export_dataset, SamplingConfig, Split};
use crate::evaluation::read_reports_csv;
use crate::fungen::MinimaSpec;

pub use config::{
    parse_config, parse_config_str, ConfigError, ConfigSources, ExperimentGrid, RunConfig,
};
pub use dump::{dump_function, write_plot_data, DumpError};
pub use grid::{run_grid, CellStatus, GridError, GridSummary};

/// Environment variable naming the default output root.
pub const OUTPUT_ENV: &str = "MINIMA_ICL_OUTPUT";

#[derive(Debug, Parser)]
#[command(
    name = "minima-icl",
    version,
    about = "In-context regression on functions with prescribed minima"
)]
pub struct Cli {
    /// Root directory for run outputs.
    #[arg(long, global = true, env = OUTPUT_ENV)]
    pub output_root: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and evaluate every cell of an experiment grid.
    Run(RunArgs),
    /// Write (x, f(x)) over a uniform grid for one function.
    DumpFn(DumpFnArgs),
    /// Write a sampled dataset split as CSV plus a JSON sidecar.
    ExportDataset(ExportArgs),
    /// Rebuild results tables from an evaluation report CSV.
    Table(TableArgs),
    /// Write loss-curve and example-function CSVs for figures.
    PlotData(PlotDataArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML config file of `key = value` settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named preset applied before the file: desk or full.
    #[arg(long)]
    pub preset: Option<String>,
    /// Override any config key, e.g. `--set epochs=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Comma list, e.g. `small,mlp2`.
    #[arg(long)]
    pub models: Option<String>,
    #[arg(long)]
    pub minima: Option<String>,
    #[arg(long)]
    pub shots: Option<String>,
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Only print the final summary.
    #[arg(long)]
    pub quiet: bool,
}

impl RunArgs {
    fn sources(&self, output_root: Option<PathBuf>) -> ConfigSources {
        let mut overrides = Vec::new();
        if let Some(p) = &self.preset {
            overrides.push(format!("preset={p}"));
        }
        overrides.extend(self.overrides.iter().cloned());
        let named = [
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("models", self.models.clone()),
            ("minima", self.minima.clone()),
            ("shots", self.shots.clone()),
            ("seeds", self.seeds.clone()),
            ("workers", self.workers.map(|v| v.to_string())),
            (
                "output_dir",
                self.output_dir
                    .as_ref()
                    .map(|p| format!("{:?}", p.display().to_string())),
            ),
        ];
        overrides.extend(
            named
                .into_iter()
                .filter_map(|(k, v)| v.map(|v| format!("{k}={v}"))),
        );
        ConfigSources {
            file: self.config.clone(),
            overrides,
            output_root,
        }
    }
}

#[derive(Debug, Args)]
pub struct DumpFnArgs {
    /// Prescribed minima as `location:value` pairs, e.g. `-1:0.5,1:-0.2`.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "random")]
    pub minima: Option<String>,
    /// Sample this many minima instead.
    #[arg(long)]
    pub random: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    pub low: f64,
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    pub high: f64,
    /// Number of grid points.
    #[arg(long, default_value_t = 301)]
    pub points: usize,
    /// Support radius of the bump, in units of the location scale.
    #[arg(long, default_value_t = 1.0)]
    pub support: f64,
    #[arg(long, default_value_t = 2.0)]
    pub beta: f64,
    /// Gap between the largest minimum value and the ceiling.
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    /// Output CSV; stdout when omitted. A `.minima.csv` is written beside it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Eval,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, default_value_t = 1)]
    pub minima: usize,
    #[arg(long, default_value_t = 8)]
    pub shots: usize,
    #[arg(long, default_value_t = 512)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    /// Report CSV; defaults to `eval_reports.csv` under the output root.
    #[arg(long)]
    pub reports: Option<PathBuf>,
    /// Where to write the tables; defaults to the report's directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotDataArgs {
    /// Run directory; defaults to the output root.
    #[arg(long)]
    pub dir: Option<PathBuf>,
    /// Seed of the example functions.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 301)]
    pub points: usize,
}

fn output_root(cli_root: Option<PathBuf>) -> PathBuf {
    cli_root.unwrap_or_else(|| PathBuf::from(config::DEFAULT_OUTPUT_DIR))
}

/// Parse `location:value` pairs.
pub fn parse_minima_pairs(text: &str) -> anyhow::Result<Vec<(f64, f64)>> {
    text.split(',')
        .map(|item| {
            let (a, y) = item
                .split_once(':')
                .with_context(|| format!("'{item}' is not location:value"))?;
            Ok((a.trim().parse()?, y.trim().parse()?))
        })
        .collect()
}

/// Run one parsed command line.
pub fn execute(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run(args) => {
            let run = parse_config(&args.sources(cli.output_root))?;
            let quiet = args.quiet;
            let total = run.grid.num_cells();
            let mut done = 0;
            let summary = run_grid(&run, |result| {
                done += 1;
                if quiet {
                    return;
                }
                let c = result.cell;
                let detail = match (&result.eval_mse, &result.error) {
                    (Some(mse), _) => format!("eval_mse {mse:.6}"),
                    (_, Some(e)) => e.clone(),
                    _ => String::new(),
                };
                eprintln!(
                    "[{done}/{total}] {} minima={} shots={} seed={}: {:?} {detail}",
                    c.model, c.minima, c.shots, c.seed, result.status
                );
            })?;
            println!(
                "{} completed, {} skipped, {} failed; outputs in {}",
                summary.completed,
                summary.skipped,
                summary.failed,
                run.grid.output_dir.display()
            );
            Ok(if summary.success() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::DumpFn(args) => {
            let spec = match (&args.minima, args.random) {
                (Some(text), _) => {
                    let (locations, values) = parse_minima_pairs(text)?.into_iter().unzip();
                    MinimaSpec::with_shape(locations, values, args.support, args.beta, args.margin)?
                }
                (None, Some(n)) => {
                    let s = dump::random_spec(n, args.seed)?;
                    MinimaSpec::with_shape(
                        s.locations,
                        s.values,
                        args.support,
                        args.beta,
                        args.margin,
                    )?
                }
                (None, None) => bail!("pass --minima or --random"),
            };
            let points = dump_function(&spec, args.low, args.high, args.points)?;
            match &args.out {
                Some(path) => dump::write_function_csv(path, &spec, &points)?,
                None => dump::write_points(std::io::stdout().lock(), &points)?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ExportDataset(args) => {
            let config = SamplingConfig {
                num_minima: args.minima,
                num_shots: args.shots,
                pairs_per_prompt: args.pairs,
                seed: args.seed,
                ..SamplingConfig::default()
            };
            let split = match args.split {
                SplitArg::Train => Split::Train,
                SplitArg::Eval => Split::Eval,
            };
            let dataset = build_dataset(&config, split)?;
            export_dataset(&dataset, &args.out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Table(args) => {
            let reports_path = args
                .reports
                .unwrap_or_else(|| output_root(cli.output_root).join("eval_reports.csv"));
            let reports = read_reports_csv(&reports_path)
                .with_context(|| format!("reading {}", reports_path.display()))?;
            let out_dir = args.out_dir.unwrap_or_else(|| {
                reports_path
                    .parent()
                    .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
            });
            std::fs::create_dir_all(&out_dir)?;
            let table = grid::write_tables(&out_dir, &reports)?;
            print!("{}", table.to_text());
            Ok(ExitCode::SUCCESS)
        }
        Command::PlotData(args) => {
            let dir = args.dir.unwrap_or_else(|| output_root(cli.output_root));
            let data = write_plot_data(&dir, args.seed, args.points)?;
            for path in data.loss_files.iter().chain(&data.function_files) {
                println!("{}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
