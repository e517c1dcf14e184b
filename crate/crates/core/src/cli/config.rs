//! Experiment configuration.
//!
//! A configuration is a flat TOML file of `key = value` lines. Values are
//! resolved in three layers: an optional named preset, then the file, then
//! `key=value` overrides from the command line. Every key is checked
//! against the known set and every value against its allowed range.
//!
//! ```toml
//! preset = "desk"
//! models = ["small", "mlp2"]
//! minima = [1, 3]
//! shots = [16]
//! seeds = [0, 1, 2]
//! epochs = 200
//! input_distribution = { kind = "gaussian", mean = 0.0, std = 1.0 }
//! ```

use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

use crate::dataset::{Distribution1d, SamplingConfig, DEFAULT_PAIRS_PER_PROMPT};
use crate::evaluation::{TABLE_MINIMA, TABLE_SHOTS};
use crate::models::ModelPreset;
use crate::training::TrainConfig;

/// Output root used when neither the config nor the environment names one.
pub const DEFAULT_OUTPUT_DIR: &str = "runs";
pub const PRESETS: [&str; 2] = ["desk", "full"];
const MAX_PAIRS_PER_PROMPT: usize = 4096;

/// Every accepted key, in documentation order.
pub const KNOWN_KEYS: [&str; 22] = [
    "preset",
    "models",
    "minima",
    "shots",
    "seeds",
    "output_dir",
    "workers",
    "checkpoint_every",
    "epsilon",
    "epochs",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_epsilon",
    "weight_decay",
    "batch_prompts",
    "mlp_batch_pairs",
    "eval_every",
    "pairs_per_prompt",
    "input_distribution",
    "minima_location_distribution",
    "minima_value_distribution",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config ({origin}): {message}")]
    Malformed { origin: String, message: String },
    #[error("unknown config key '{key}' ({origin}); known keys: {}", KNOWN_KEYS.join(", "))]
    UnknownKey { key: String, origin: String },
    #[error("invalid value for '{key}': expected {expected}, found {found}")]
    InvalidValue {
        key: String,
        expected: &'static str,
        found: String,
    },
    #[error("{key} = {value} is out of range (allowed: {allowed})")]
    OutOfRange {
        key: String,
        value: String,
        allowed: String,
    },
    #[error("duplicate entry {value} in '{key}'")]
    Duplicate { key: String, value: String },
}

/// The cells to run and where to put them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub models: Vec<ModelPreset>,
    pub minima: Vec<usize>,
    pub shots: Vec<usize>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Cells trained concurrently.
    pub workers: usize,
    /// Save a checkpoint every this many epochs (0: final epoch only).
    pub checkpoint_every: usize,
    /// Learnability threshold attached to reports; never used in training.
    pub epsilon: Option<f64>,
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<(), ConfigError> {
        non_empty("models", &self.models)?;
        non_empty("minima", &self.minima)?;
        non_empty("shots", &self.shots)?;
        non_empty("seeds", &self.seeds)?;
        unique("models", &self.models)?;
        unique("minima", &self.minima)?;
        unique("shots", &self.shots)?;
        unique("seeds", &self.seeds)?;
        for &m in &self.minima {
            if !TABLE_MINIMA.contains(&m) {
                return Err(out_of_range("minima", m, set_text(&TABLE_MINIMA)));
            }
        }
        for &s in &self.shots {
            if !TABLE_SHOTS.contains(&s) {
                return Err(out_of_range("shots", s, set_text(&TABLE_SHOTS)));
            }
        }
        if self.workers == 0 {
            return Err(out_of_range("workers", 0, "integers >= 1"));
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(out_of_range("epsilon", eps, "finite reals > 0"));
            }
        }
        Ok(())
    }

    pub fn num_cells(&self) -> usize {
        self.models.len() * self.minima.len() * self.shots.len() * self.seeds.len()
    }
}

/// Fully resolved configuration of one `run` invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub grid: ExperimentGrid,
    pub train: TrainConfig,
    /// Template for every cell; minima, shots and seed are set per cell.
    pub sampling: SamplingConfig,
}

impl RunConfig {
    /// Defaults of the full experiment, optionally adjusted by a preset.
    pub fn preset(name: Option<&str>, output_dir: PathBuf) -> Result<Self, ConfigError> {
        let mut config = Self {
            preset: name.map(str::to_string),
            grid: ExperimentGrid {
                models: ModelPreset::ALL.to_vec(),
                minima: TABLE_MINIMA.to_vec(),
                shots: TABLE_SHOTS.to_vec(),
                seeds: vec![0],
                output_dir,
                workers: 1,
                checkpoint_every: 0,
                epsilon: None,
            },
            train: TrainConfig::default(),
            sampling: SamplingConfig {
                pairs_per_prompt: DEFAULT_PAIRS_PER_PROMPT,
                ..SamplingConfig::default()
            },
        };
        match name {
            None | Some("full") => {}
            Some("desk") => {
                // CPU-sized: fewer epochs and shots, short prompts, three seeds.
                config.train.epochs = 200;
                config.grid.shots = vec![8, 16];
                config.grid.seeds = vec![0, 1, 2];
                config.sampling.pairs_per_prompt = 16;
                config.train.mlp_batch_pairs = 16;
            }
            Some(other) => return Err(out_of_range("preset", quoted(other), PRESETS.join(", "))),
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.grid.validate()?;
        let sampling = &self.sampling;
        if sampling.pairs_per_prompt == 0 || sampling.pairs_per_prompt > MAX_PAIRS_PER_PROMPT {
            return Err(out_of_range(
                "pairs_per_prompt",
                sampling.pairs_per_prompt,
                format!("1..={MAX_PAIRS_PER_PROMPT}"),
            ));
        }
        for (key, dist) in [
            ("input_distribution", sampling.input_distribution),
            (
                "minima_location_distribution",
                sampling.minima_location_distribution,
            ),
            (
                "minima_value_distribution",
                sampling.minima_value_distribution,
            ),
        ] {
            if dist.validate().is_err() {
                return Err(out_of_range(
                    key,
                    format!("{dist:?}"),
                    "gaussian with std > 0 or uniform with low < high",
                ));
            }
        }
        let train = &self.train;
        if !(train.learning_rate > 0.0 && train.learning_rate.is_finite()) {
            return Err(out_of_range(
                "learning_rate",
                train.learning_rate,
                "finite reals > 0",
            ));
        }
        if train.epochs == 0 {
            return Err(out_of_range("epochs", 0, "integers >= 1"));
        }
        for (key, beta) in [
            ("adam_beta1", train.adam_beta1),
            ("adam_beta2", train.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&beta) {
                return Err(out_of_range(key, beta, "[0, 1)"));
            }
        }
        if train.adam_epsilon.is_nan() || train.adam_epsilon <= 0.0 {
            return Err(out_of_range(
                "adam_epsilon",
                train.adam_epsilon,
                "reals > 0",
            ));
        }
        if !(train.weight_decay >= 0.0 && train.learning_rate * train.weight_decay < 1.0) {
            return Err(out_of_range(
                "weight_decay",
                train.weight_decay,
                "reals >= 0 with learning_rate * weight_decay < 1",
            ));
        }
        if train.batch_prompts == Some(0) {
            return Err(out_of_range("batch_prompts", 0, "integers >= 1 or \"all\""));
        }
        if train.mlp_batch_pairs == 0 {
            return Err(out_of_range("mlp_batch_pairs", 0, "integers >= 1"));
        }
        Ok(())
    }

    fn apply(&mut self, key: &str, value: &Value) -> Result<(), ConfigError> {
        match key {
            "preset" => {}
            "models" => {
                self.grid.models = list(key, value)?
                    .iter()
                    .map(|v| {
                        let name = string(key, v)?;
                        name.parse().map_err(|_| {
                            out_of_range(key, quoted(&name), "pico, tiny, small, standard, mlp2")
                        })
                    })
                    .collect::<Result<_, _>>()?
            }
            "minima" => self.grid.minima = usize_list(key, value)?,
            "shots" => self.grid.shots = usize_list(key, value)?,
            "seeds" => {
                self.grid.seeds = list(key, value)?
                    .iter()
                    .map(|v| integer(key, v).map(|n| n as u64))
                    .collect::<Result<_, _>>()?
            }
            "output_dir" => self.grid.output_dir = PathBuf::from(string(key, value)?),
            "workers" => self.grid.workers = integer(key, value)?,
            "checkpoint_every" => self.grid.checkpoint_every = integer(key, value)?,
            "epsilon" => self.grid.epsilon = Some(real(key, value)?),
            "epochs" => self.train.epochs = integer(key, value)?,
            "learning_rate" => self.train.learning_rate = real(key, value)?,
            "adam_beta1" => self.train.adam_beta1 = real(key, value)?,
            "adam_beta2" => self.train.adam_beta2 = real(key, value)?,
            "adam_epsilon" => self.train.adam_epsilon = real(key, value)?,
            "weight_decay" => self.train.weight_decay = real(key, value)?,
            "batch_prompts" => {
                self.train.batch_prompts = match value {
                    Value::String(s) if s == "all" => None,
                    Value::Integer(_) => Some(integer(key, value)?),
                    other => return Err(invalid(key, "an integer or \"all\"", other)),
                }
            }
            "mlp_batch_pairs" => self.train.mlp_batch_pairs = integer(key, value)?,
            "eval_every" => self.train.eval_every = integer(key, value)?,
            "pairs_per_prompt" => self.sampling.pairs_per_prompt = integer(key, value)?,
            "input_distribution" => self.sampling.input_distribution = distribution(key, value)?,
            "minima_location_distribution" => {
                self.sampling.minima_location_distribution = distribution(key, value)?
            }
            "minima_value_distribution" => {
                self.sampling.minima_value_distribution = distribution(key, value)?
            }
            _ => unreachable!("keys are checked before they are applied"),
        }
        Ok(())
    }
}

/// Where configuration comes from for one invocation.
#[derive(Debug, Clone, Default)]
pub struct ConfigSources {
    pub file: Option<PathBuf>,
    /// `key=value` overrides, applied in order after the file.
    pub overrides: Vec<String>,
    /// Output root from the environment, below any explicit `output_dir`.
    pub output_root: Option<PathBuf>,
}

/// Resolve and validate the configuration of a grid run.
pub fn parse_config(sources: &ConfigSources) -> Result<RunConfig, ConfigError> {
    let text = match &sources.file {
        Some(path) => std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.clone(),
            source,
        })?,
        None => String::new(),
    };
    let origin = sources
        .file
        .as_deref()
        .map_or_else(|| "<empty>".to_string(), |p| p.display().to_string());
    parse_config_str(
        &text,
        &origin,
        &sources.overrides,
        sources.output_root.as_deref(),
    )
}

/// [`parse_config`] on in-memory text; `origin` names the text in errors.
pub fn parse_config_str(
    text: &str,
    origin: &str,
    overrides: &[String],
    output_root: Option<&Path>,
) -> Result<RunConfig, ConfigError> {
    let file: Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Malformed {
            origin: origin.to_string(),
            message: e.message().to_string(),
        })?;
    check_keys(&file, origin)?;
    let mut flags = Table::new();
    for item in overrides {
        let (key, value) = parse_override(item)?;
        flags.insert(key, value);
    }
    check_keys(&flags, "command line")?;

    let preset = match flags.get("preset").or_else(|| file.get("preset")) {
        Some(v) => Some(string("preset", v)?),
        None => None,
    };
    let output_dir =
        output_root.map_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR), Path::to_path_buf);
    let mut config = RunConfig::preset(preset.as_deref(), output_dir)?;
    for (key, value) in file.iter().chain(flags.iter()) {
        config.apply(key, value)?;
    }
    config.validate()?;
    Ok(config)
}

/// Split `key=value`. The value is read as a TOML value when it parses as
/// one; otherwise a comma list of bare words and integers, so that
/// `models=pico,mlp2` and `shots=8,16` work unquoted.
pub fn parse_override(item: &str) -> Result<(String, Value), ConfigError> {
    let malformed = |message: String| ConfigError::Malformed {
        origin: "command line".into(),
        message,
    };
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| malformed(format!("override '{item}' is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(malformed(format!("invalid key in override '{item}'")));
    }
    let raw = raw.trim();
    if let Ok(table) = format!("v = {raw}").parse::<Table>() {
        if let Some(value) = table.get("v") {
            return Ok((key.to_string(), value.clone()));
        }
    }
    let bare = |word: &str| {
        let word = word.trim();
        word.parse::<i64>()
            .map(Value::Integer)
            .unwrap_or_else(|_| Value::String(word.to_string()))
    };
    let value = if raw.contains(',') {
        Value::Array(raw.split(',').map(bare).collect())
    } else {
        bare(raw)
    };
    Ok((key.to_string(), value))
}

fn check_keys(table: &Table, origin: &str) -> Result<(), ConfigError> {
    match table.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
        Some(key) => Err(ConfigError::UnknownKey {
            key: key.clone(),
            origin: origin.to_string(),
        }),
        None => Ok(()),
    }
}

fn describe(value: &Value) -> String {
    format!("{} {value}", value.type_str())
}

fn invalid(key: &str, expected: &'static str, value: &Value) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_string(),
        expected,
        found: describe(value),
    }
}

fn out_of_range(key: &str, value: impl Display, allowed: impl Into<String>) -> ConfigError {
    ConfigError::OutOfRange {
        key: key.to_string(),
        value: value.to_string(),
        allowed: allowed.into(),
    }
}

fn quoted(s: &str) -> String {
    format!("\"{s}\"")
}

fn set_text(values: &[usize]) -> String {
    let items: Vec<String> = values.iter().map(ToString::to_string).collect();
    format!("{{{}}}", items.join(", "))
}

fn non_empty<T>(key: &str, values: &[T]) -> Result<(), ConfigError> {
    if values.is_empty() {
        return Err(out_of_range(key, "[]", "a non-empty list"));
    }
    Ok(())
}

fn unique<T: Ord + std::fmt::Debug>(key: &str, values: &[T]) -> Result<(), ConfigError> {
    let mut seen = BTreeSet::new();
    for v in values {
        if !seen.insert(v) {
            return Err(ConfigError::Duplicate {
                key: key.to_string(),
                value: format!("{v:?}").to_lowercase(),
            });
        }
    }
    Ok(())
}

fn integer(key: &str, value: &Value) -> Result<usize, ConfigError> {
    match value {
        Value::Integer(n) if *n >= 0 => Ok(*n as usize),
        Value::Integer(n) => Err(out_of_range(key, n, "integers >= 0")),
        other => Err(invalid(key, "an integer", other)),
    }
}

fn real(key: &str, value: &Value) -> Result<f64, ConfigError> {
    match value {
        Value::Float(x) => Ok(*x),
        Value::Integer(n) => Ok(*n as f64),
        other => Err(invalid(key, "a number", other)),
    }
}

fn string(key: &str, value: &Value) -> Result<String, ConfigError> {
    match value {
        Value::String(s) => Ok(s.clone()),
        other => Err(invalid(key, "a string", other)),
    }
}

/// A list value; a lone scalar counts as a one-element list.
fn list<'a>(key: &str, value: &'a Value) -> Result<Vec<&'a Value>, ConfigError> {
    match value {
        Value::Array(items) => Ok(items.iter().collect()),
        Value::Table(_) => Err(invalid(key, "a list", value)),
        scalar => Ok(vec![scalar]),
    }
}

fn usize_list(key: &str, value: &Value) -> Result<Vec<usize>, ConfigError> {
    list(key, value)?
        .into_iter()
        .map(|v| integer(key, v))
        .collect()
}

fn distribution(key: &str, value: &Value) -> Result<Distribution1d, ConfigError> {
    value.clone().try_into().map_err(|_| {
        invalid(
            key,
            "a table such as { kind = \"gaussian\", mean = 0.0, std = 1.0 }",
            value,
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, overrides: &[&str]) -> Result<RunConfig, ConfigError> {
        let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        parse_config_str(text, "test.toml", &overrides, None)
    }

    #[test]
    fn empty_config_gives_defaults() {
        let cfg = parse("", &[]).unwrap();
        assert_eq!(cfg.train.learning_rate, 1e-4);
        assert_eq!(cfg.train.epochs, 1000);
        assert_eq!(cfg.grid.shots, vec![8, 16, 32]);
        assert_eq!(cfg.grid.minima, vec![1, 2, 3, 4]);
        assert_eq!(cfg.grid.models.len(), 5);
        assert_eq!(cfg.sampling.pairs_per_prompt, 512);
        assert_eq!(cfg.grid.output_dir, PathBuf::from(DEFAULT_OUTPUT_DIR));
    }

    #[test]
    fn flag_overrides_file() {
        let cfg = parse("epochs = 50\nshots = [8]", &["epochs=200"]).unwrap();
        assert_eq!(cfg.train.epochs, 200);
        assert_eq!(cfg.grid.shots, vec![8]);
    }

    #[test]
    fn shots_outside_grid_names_allowed_set() {
        let err = parse("", &["shots=7"]).unwrap_err();
        assert!(matches!(err, ConfigError::OutOfRange { ref key, .. } if key == "shots"));
        assert!(err.to_string().contains("{8, 16, 32}"), "{err}");
    }

    #[test]
    fn distinct_diagnostics() {
        let unknown = parse("epohcs = 3", &[]).unwrap_err();
        assert!(matches!(unknown, ConfigError::UnknownKey { ref key, .. } if key == "epohcs"));
        let range = parse("minima = [5]", &[]).unwrap_err();
        assert!(matches!(range, ConfigError::OutOfRange { .. }));
        let malformed = parse("epochs = = 3", &[]).unwrap_err();
        assert!(matches!(malformed, ConfigError::Malformed { .. }));
        let typed = parse("epochs = \"many\"", &[]).unwrap_err();
        assert!(matches!(typed, ConfigError::InvalidValue { .. }));
        let dup = parse("seeds = [1, 1]", &[]).unwrap_err();
        assert!(matches!(dup, ConfigError::Duplicate { .. }));
    }

    #[test]
    fn desk_preset() {
        let cfg = parse("preset = \"desk\"", &[]).unwrap();
        assert_eq!(cfg.train.epochs, 200);
        assert_eq!(cfg.grid.shots, vec![8, 16]);
        assert_eq!(cfg.grid.seeds, vec![0, 1, 2]);
        let err = parse("preset = \"laptop\"", &[]).unwrap_err();
        assert!(matches!(err, ConfigError::OutOfRange { .. }));
    }

    #[test]
    fn bare_override_lists_and_tables() {
        let cfg = parse(
            "",
            &[
                "models=small,mlp2",
                "batch_prompts=all",
                "input_distribution={ kind = \"uniform\", low = -2.0, high = 2.0 }",
            ],
        )
        .unwrap();
        assert_eq!(cfg.grid.models, vec![ModelPreset::Small, ModelPreset::Mlp2]);
        assert_eq!(cfg.train.batch_prompts, None);
        assert_eq!(
            cfg.sampling.input_distribution,
            Distribution1d::Uniform {
                low: -2.0,
                high: 2.0
            }
        );
        assert!(parse("", &["models=gpt"]).is_err());
        assert!(parse("", &["noequals"]).is_err());
    }

    #[test]
    fn output_root_precedence() {
        let root = Path::new("/tmp/env-root");
        let cfg = parse_config_str("", "t", &[], Some(root)).unwrap();
        assert_eq!(cfg.grid.output_dir, root);
        let cfg = parse_config_str("output_dir = \"x\"", "t", &[], Some(root)).unwrap();
        assert_eq!(cfg.grid.output_dir, PathBuf::from("x"));
    }
}
