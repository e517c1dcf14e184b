//! Sampling of minima specs and interleaved prompts.
//!
//! Every prompt carries one freshly sampled function and `pairs_per_prompt`
//! Gaussian inputs with their exact labels. Randomness is split per prompt:
//! prompt `i` of a split draws from its own ChaCha stream seeded with
//! `derive_seed(split_seed, i)`, so prompts can be built in any order or in
//! parallel and the dataset stays a pure function of `(config, split)`.
//!
//! # Export format
//!
//! `<name>.csv` holds one row per pair with header `prompt_id,position,x,y`
//! (positions count pairs from 0). `<name>.json` next to it holds the
//! sampling config, the split and the minima spec of every prompt. Floats
//! are written in shortest round-trip form, so import reproduces the
//! dataset bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fungen::{FunctionError, GeneratedFunction, MinimaSpec};

pub const DEFAULT_PAIRS_PER_PROMPT: usize = 512;
/// Rejection threshold for the smallest gap between sampled locations.
pub const MIN_SAMPLED_GAP: f64 = 1e-3;
pub const MAX_SAMPLING_ATTEMPTS: usize = 1000;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no minima spec with location gap >= {gap} after {attempts} attempts")]
    SamplingFailed { attempts: usize, gap: f64 },
    #[error("invalid sampling config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Function(#[from] FunctionError),
    #[error("malformed dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A one-dimensional sampling distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution1d {
    Gaussian { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
}

impl Default for Distribution1d {
    fn default() -> Self {
        Distribution1d::Gaussian {
            mean: 0.0,
            std: 1.0,
        }
    }
}

impl Distribution1d {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let ok = match *self {
            Distribution1d::Gaussian { mean, std } => {
                mean.is_finite() && std > 0.0 && std.is_finite()
            }
            Distribution1d::Uniform { low, high } => {
                low.is_finite() && high.is_finite() && low < high
            }
        };
        if ok {
            Ok(())
        } else {
            Err(DatasetError::InvalidConfig(format!(
                "bad distribution {self:?}"
            )))
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            Distribution1d::Gaussian { mean, std } => Normal::new(mean, std)
                .expect("validated distribution")
                .sample(rng),
            Distribution1d::Uniform { low, high } => rng.random_range(low..high),
        }
    }

    pub fn sample_n(&self, n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub num_minima: usize,
    /// Number of prompts in each split.
    pub num_shots: usize,
    pub pairs_per_prompt: usize,
    pub input_distribution: Distribution1d,
    pub minima_location_distribution: Distribution1d,
    pub minima_value_distribution: Distribution1d,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            num_minima: 1,
            num_shots: 8,
            pairs_per_prompt: DEFAULT_PAIRS_PER_PROMPT,
            input_distribution: Distribution1d::default(),
            minima_location_distribution: Distribution1d::default(),
            minima_value_distribution: Distribution1d::default(),
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.num_minima == 0 {
            return Err(DatasetError::InvalidConfig(
                "num_minima must be >= 1".into(),
            ));
        }
        if self.num_shots == 0 {
            return Err(DatasetError::InvalidConfig("num_shots must be >= 1".into()));
        }
        if self.pairs_per_prompt == 0 {
            return Err(DatasetError::InvalidConfig(
                "pairs_per_prompt must be >= 1".into(),
            ));
        }
        self.input_distribution.validate()?;
        self.minima_location_distribution.validate()?;
        self.minima_value_distribution.validate()
    }

    /// Interleaved sequence length of one prompt.
    pub fn context_length(&self) -> usize {
        2 * self.pairs_per_prompt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    fn stream(self) -> u64 {
        match self {
            Split::Train => 0x7472_6169_6e00_0000,
            Split::Eval => 0x6576_616c_0000_0000,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for sub-stream `stream` of `parent`.
pub fn derive_seed(parent: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ splitmix64(stream.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn split_seed(seed: u64, split: Split) -> u64 {
    derive_seed(seed, split.stream())
}

/// One sampled function and its labelled inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub spec: MinimaSpec,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl Prompt {
    /// `x_1, f(x_1), ..., x_m, f(x_m)`; the last `x` doubles as the query.
    pub fn interleaved(&self) -> Vec<f64> {
        crate::models::interleave(&self.xs, &self.ys)
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Largest `|y - f(x)|` over the prompt.
    pub fn label_error(&self) -> Result<f64, FunctionError> {
        let f = GeneratedFunction::new(self.spec.clone())?;
        Ok(f.eval_batch(&self.xs)
            .iter()
            .zip(&self.ys)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptDataset {
    pub prompts: Vec<Prompt>,
    pub config: SamplingConfig,
    pub split: Split,
}

impl PromptDataset {
    pub fn total_pairs(&self) -> usize {
        self.prompts.iter().map(Prompt::len).sum()
    }

    /// All pairs of all prompts in one pool, as the MLP baseline sees them.
    pub fn pooled(&self) -> (Vec<f64>, Vec<f64>) {
        let xs = self
            .prompts
            .iter()
            .flat_map(|p| p.xs.iter().copied())
            .collect();
        let ys = self
            .prompts
            .iter()
            .flat_map(|p| p.ys.iter().copied())
            .collect();
        (xs, ys)
    }
}

/// Locations and values for one function; locations are redrawn until no
/// two are closer than [`MIN_SAMPLED_GAP`].
pub fn sample_minima_spec(
    num_minima: usize,
    rng: &mut impl Rng,
    config: &SamplingConfig,
) -> Result<MinimaSpec, DatasetError> {
    if num_minima == 0 {
        return Err(DatasetError::InvalidConfig(
            "num_minima must be >= 1".into(),
        ));
    }
    for _ in 0..MAX_SAMPLING_ATTEMPTS {
        let mut locations = config
            .minima_location_distribution
            .sample_n(num_minima, rng);
        let mut sorted = locations.clone();
        sorted.sort_by(f64::total_cmp);
        let gap = sorted
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        if gap >= MIN_SAMPLED_GAP {
            let values = config.minima_value_distribution.sample_n(num_minima, rng);
            return Ok(MinimaSpec::new(std::mem::take(&mut locations), values)?);
        }
    }
    Err(DatasetError::SamplingFailed {
        attempts: MAX_SAMPLING_ATTEMPTS,
        gap: MIN_SAMPLED_GAP,
    })
}

pub fn build_prompt(
    spec: MinimaSpec,
    rng: &mut impl Rng,
    config: &SamplingConfig,
) -> Result<Prompt, DatasetError> {
    let function = GeneratedFunction::new(spec)?;
    let xs = config
        .input_distribution
        .sample_n(config.pairs_per_prompt, rng);
    let ys = function.eval_batch(&xs);
    Ok(Prompt {
        spec: function.spec().clone(),
        xs,
        ys,
    })
}

pub fn build_dataset(config: &SamplingConfig, split: Split) -> Result<PromptDataset, DatasetError> {
    config.validate()?;
    let parent = split_seed(config.seed, split);
    let prompts = (0..config.num_shots)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(parent, i as u64));
            let spec = sample_minima_spec(config.num_minima, &mut rng, config)?;
            build_prompt(spec, &mut rng, config)
        })
        .collect::<Result<_, _>>()?;
    Ok(PromptDataset {
        prompts,
        config: config.clone(),
        split,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    config: SamplingConfig,
    split: Split,
    specs: Vec<MinimaSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PairRow {
    prompt_id: usize,
    position: usize,
    x: f64,
    y: f64,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes `csv_path` and its JSON sidecar.
pub fn export_dataset(dataset: &PromptDataset, csv_path: &Path) -> Result<(), DatasetError> {
    if let Some(parent) = csv_path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut writer = csv::Writer::from_path(csv_path)?;
    for (prompt_id, prompt) in dataset.prompts.iter().enumerate() {
        for (position, (&x, &y)) in prompt.xs.iter().zip(&prompt.ys).enumerate() {
            writer.serialize(PairRow {
                prompt_id,
                position,
                x,
                y,
            })?;
        }
    }
    writer.flush()?;
    let sidecar = Sidecar {
        config: dataset.config.clone(),
        split: dataset.split,
        specs: dataset.prompts.iter().map(|p| p.spec.clone()).collect(),
    };
    fs::write(
        sidecar_path(csv_path),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(())
}

pub fn import_dataset(csv_path: &Path) -> Result<PromptDataset, DatasetError> {
    let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(csv_path))?)?;
    let mut prompts: Vec<Prompt> = sidecar
        .specs
        .into_iter()
        .map(|spec| {
            spec.validate()?;
            Ok(Prompt {
                spec,
                xs: Vec::new(),
                ys: Vec::new(),
            })
        })
        .collect::<Result<_, DatasetError>>()?;
    let mut reader = csv::Reader::from_path(csv_path)?;
    for row in reader.deserialize() {
        let row: PairRow = row?;
        let prompt = prompts
            .get_mut(row.prompt_id)
            .ok_or_else(|| DatasetError::Format(format!("unknown prompt_id {}", row.prompt_id)))?;
        if row.position != prompt.xs.len() {
            return Err(DatasetError::Format(format!(
                "prompt {} position {} out of order",
                row.prompt_id, row.position
            )));
        }
        prompt.xs.push(row.x);
        prompt.ys.push(row.y);
    }
    Ok(PromptDataset {
        prompts,
        config: sidecar.config,
        split: sidecar.split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(minima: usize, shots: usize, pairs: usize, seed: u64) -> SamplingConfig {
        SamplingConfig {
            num_minima: minima,
            num_shots: shots,
            pairs_per_prompt: pairs,
            seed,
            ..SamplingConfig::default()
        }
    }

    #[test]
    fn single_minimum_spec() {
        let cfg = config(1, 1, 4, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = sample_minima_spec(1, &mut rng, &cfg).unwrap();
        assert_eq!(spec.num_minima(), 1);
        assert_eq!(GeneratedFunction::new(spec).unwrap().scale_b(), 1.0);
    }

    #[test]
    fn seeded_spec_is_reproducible() {
        let cfg = config(4, 1, 4, 0);
        let a = sample_minima_spec(4, &mut ChaCha8Rng::seed_from_u64(99), &cfg).unwrap();
        let b = sample_minima_spec(4, &mut ChaCha8Rng::seed_from_u64(99), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.c, a.beta, a.ceiling_margin), (1.0, 2.0, 1.0));
    }

    #[test]
    fn pathological_distribution_fails() {
        let cfg = SamplingConfig {
            minima_location_distribution: Distribution1d::Uniform {
                low: 0.0,
                high: 1e-9,
            },
            ..config(3, 1, 4, 0)
        };
        let err = sample_minima_spec(3, &mut ChaCha8Rng::seed_from_u64(0), &cfg).unwrap_err();
        assert!(matches!(
            err,
            DatasetError::SamplingFailed { attempts: 1000, .. }
        ));
    }

    #[test]
    fn prompt_length_matches_context() {
        let cfg = config(2, 1, 512, 3);
        let ds = build_dataset(&cfg, Split::Train).unwrap();
        assert_eq!(ds.prompts[0].interleaved().len(), 1024);
        assert_eq!(cfg.context_length(), 1024);
    }

    #[test]
    fn label_at_prescribed_minimum() {
        let cfg = config(1, 1, 3, 0);
        let spec = MinimaSpec::new(vec![0.0], vec![0.0]).unwrap();
        let mut prompt = build_prompt(spec, &mut ChaCha8Rng::seed_from_u64(0), &cfg).unwrap();
        prompt.xs[1] = 0.0;
        prompt.ys = GeneratedFunction::new(prompt.spec.clone())
            .unwrap()
            .eval_batch(&prompt.xs);
        assert_eq!(prompt.ys[1], 0.0);
    }

    #[test]
    fn dataset_sizes() {
        for (shots, pairs) in [(8, 4096), (16, 8192), (32, 16384)] {
            let ds = build_dataset(&config(1, shots, 512, 0), Split::Train).unwrap();
            assert_eq!(ds.prompts.len(), shots);
            assert_eq!(ds.total_pairs(), pairs);
        }
    }

    #[test]
    fn splits_differ_with_equal_size() {
        let cfg = config(2, 4, 16, 5);
        let train = build_dataset(&cfg, Split::Train).unwrap();
        let eval = build_dataset(&cfg, Split::Eval).unwrap();
        assert_ne!(split_seed(5, Split::Train), split_seed(5, Split::Eval));
        assert_eq!(train.total_pairs(), eval.total_pairs());
        assert_ne!(train.prompts, eval.prompts);
        assert_eq!(build_dataset(&cfg, Split::Train).unwrap(), train);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(build_dataset(&config(0, 1, 1, 0), Split::Train).is_err());
        assert!(build_dataset(&config(1, 0, 1, 0), Split::Train).is_err());
        assert!(build_dataset(&config(1, 1, 0, 0), Split::Train).is_err());
        let bad = SamplingConfig {
            input_distribution: Distribution1d::Gaussian {
                mean: 0.0,
                std: -1.0,
            },
            ..config(1, 1, 1, 0)
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn export_import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.csv");
        let ds = build_dataset(&config(3, 3, 20, 8), Split::Eval).unwrap();
        export_dataset(&ds, &path).unwrap();
        let back = import_dataset(&path).unwrap();
        assert_eq!(back, ds);
        let header = fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("prompt_id,position,x,y\n"));
    }
}
