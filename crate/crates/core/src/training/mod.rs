//! MSE training with AdamW.
//!
//! An epoch is one pass over every prompt of the training split, in an
//! order shuffled per epoch from the run seed. Transformers take one step
//! per `batch_prompts` prompts, with the loss averaged over every `x`
//! position; the MLP baseline sees the same pairs pooled and shuffled, in
//! minibatches of `mlp_batch_pairs`.

mod adamw;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adamw::{adamw_step, adamw_update, AdamState};

use crate::dataset::{
    build_dataset, derive_seed, DatasetError, PromptDataset, SamplingConfig, Split,
};
use crate::evaluation::evaluate_model;
use crate::models::{reset_parameters, ModelConfig, ModelError, ModelKind, ParameterSet, Real};

pub use crate::models::mse as mse_loss;

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss {
        epoch: usize,
        /// Rows recorded before the abort.
        metrics: Vec<MetricsRow>,
    },
    #[error("model context {model} does not fit prompts of {prompt} tokens")]
    ContextMismatch { model: usize, prompt: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub weight_decay: f64,
    /// Prompts per transformer step; `None` means every prompt of the split.
    pub batch_prompts: Option<usize>,
    /// Pooled pairs per MLP step.
    pub mlp_batch_pairs: usize,
    /// Evaluate on the eval split every this many epochs (0: final epoch only).
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 1000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            weight_decay: 0.01,
            batch_prompts: Some(1),
            mlp_batch_pairs: 512,
            eval_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if self.epochs == 0 {
            return fail("epochs must be >= 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return fail("adam betas must lie in [0, 1)");
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon <= 0.0 {
            return fail("adam_epsilon must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.learning_rate * self.weight_decay < 1.0) {
            return fail("weight_decay must be >= 0 with lr * weight_decay < 1");
        }
        if self.batch_prompts == Some(0) || self.mlp_batch_pairs == 0 {
            return fail("batch sizes must be positive");
        }
        Ok(())
    }

    fn should_evaluate(&self, epoch: usize) -> bool {
        epoch == self.epochs || (self.eval_every > 0 && epoch.is_multiple_of(self.eval_every))
    }
}

/// One epoch of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub model_name: String,
    pub num_minima: usize,
    pub num_shots: usize,
    /// 1-based.
    pub epoch: usize,
    pub train_mse: f64,
    pub eval_mse: Option<f64>,
    pub wall_ms: u64,
    pub seed: u64,
}

/// Identity of a run as it appears in metrics rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLabel {
    pub run_id: String,
    pub model_name: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: ParameterSet<T>,
    pub metrics: Vec<MetricsRow>,
}

/// Train `model_config` on freshly built train/eval splits.
pub fn run_training(
    model_config: &ModelConfig,
    sampling_config: &SamplingConfig,
    train_config: &TrainConfig,
) -> Result<TrainOutcome<f32>, TrainError> {
    let train = build_dataset(sampling_config, Split::Train)?;
    let eval = build_dataset(sampling_config, Split::Eval)?;
    let label = RunLabel {
        run_id: format!(
            "m{}-s{}-seed{}",
            sampling_config.num_minima, sampling_config.num_shots, train_config.seed
        ),
        model_name: match model_config.kind {
            ModelKind::Mlp2 => "mlp2".into(),
            ModelKind::Transformer => format!("transformer-e{}", model_config.embed_dim),
        },
    };
    train_on(
        model_config,
        &train,
        Some(&eval),
        train_config,
        &label,
        |_, _| {},
    )
}

/// Prompt inputs and labels downcast once for the training precision.
struct CastPrompt<T> {
    xs: Vec<T>,
    ys: Vec<T>,
}

fn cast_prompts<T: Real>(dataset: &PromptDataset) -> Vec<CastPrompt<T>> {
    dataset
        .prompts
        .iter()
        .map(|p| CastPrompt {
            xs: p.xs.iter().map(|&v| T::from_f64_lossy(v)).collect(),
            ys: p.ys.iter().map(|&v| T::from_f64_lossy(v)).collect(),
        })
        .collect()
}

/// Core loop: reset `model_config` from the run seed and train it for
/// `train_config.epochs` epochs on `train`. Every finished row is passed to
/// `on_row` as soon as it exists, together with the parameters at that point.
pub fn train_on<T: Real>(
    model_config: &ModelConfig,
    train: &PromptDataset,
    eval: Option<&PromptDataset>,
    train_config: &TrainConfig,
    label: &RunLabel,
    mut on_row: impl FnMut(&MetricsRow, &ParameterSet<T>),
) -> Result<TrainOutcome<T>, TrainError> {
    train_config.validate()?;
    model_config.validate()?;
    if train.prompts.is_empty() {
        return Err(TrainError::InvalidConfig("training split is empty".into()));
    }
    if model_config.kind == ModelKind::Transformer {
        let longest = train
            .prompts
            .iter()
            .chain(eval.iter().flat_map(|e| e.prompts.iter()))
            .map(|p| 2 * p.len())
            .max()
            .unwrap_or(0);
        if longest > model_config.context_length {
            return Err(TrainError::ContextMismatch {
                model: model_config.context_length,
                prompt: longest,
            });
        }
    }

    let mut params =
        reset_parameters::<T>(model_config, derive_seed(train_config.seed, INIT_STREAM))?;
    let mut grads = params.zeros_like();
    let mut state = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(train_config.seed, SHUFFLE_STREAM));
    let prompts = cast_prompts::<T>(train);
    let (pool_x, pool_y): (Vec<T>, Vec<T>) = prompts
        .iter()
        .flat_map(|p| p.xs.iter().copied().zip(p.ys.iter().copied()))
        .unzip();

    let start = Instant::now();
    let mut step = 0u64;
    let mut metrics = Vec::with_capacity(train_config.epochs);
    for epoch in 1..=train_config.epochs {
        let mut loss_sum = 0.0;
        let mut loss_weight = 0.0;
        match model_config.kind {
            ModelKind::Transformer => {
                let mut order: Vec<usize> = (0..prompts.len()).collect();
                order.shuffle(&mut rng);
                let batch = train_config.batch_prompts.unwrap_or(prompts.len());
                for chunk in order.chunks(batch) {
                    grads.fill(T::zero());
                    let ParameterSet::Transformer(model) = &params else {
                        unreachable!()
                    };
                    let ParameterSet::Transformer(g) = &mut grads else {
                        unreachable!()
                    };
                    for &i in chunk {
                        let loss = model.loss_and_grad(&prompts[i].xs, &prompts[i].ys, g)?;
                        loss_sum += loss.to_f64().unwrap();
                        loss_weight += 1.0;
                    }
                    grads.scale(T::one() / T::from_usize(chunk.len()).unwrap());
                    step += 1;
                    adamw_step(&mut params, &grads, &mut state, train_config, step)?;
                }
            }
            ModelKind::Mlp2 => {
                let mut order: Vec<usize> = (0..pool_x.len()).collect();
                order.shuffle(&mut rng);
                for chunk in order.chunks(train_config.mlp_batch_pairs) {
                    let xs: Vec<T> = chunk.iter().map(|&i| pool_x[i]).collect();
                    let ys: Vec<T> = chunk.iter().map(|&i| pool_y[i]).collect();
                    grads.fill(T::zero());
                    let ParameterSet::Mlp2(model) = &params else {
                        unreachable!()
                    };
                    let ParameterSet::Mlp2(g) = &mut grads else {
                        unreachable!()
                    };
                    let loss = model.loss_and_grad(&xs, &ys, g)?;
                    loss_sum += loss.to_f64().unwrap() * chunk.len() as f64;
                    loss_weight += chunk.len() as f64;
                    step += 1;
                    adamw_step(&mut params, &grads, &mut state, train_config, step)?;
                }
            }
        }
        let train_mse = loss_sum / loss_weight;
        if !train_mse.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, metrics });
        }
        let eval_mse = match eval {
            Some(e) if train_config.should_evaluate(epoch) => Some(evaluate_model(&params, e)?),
            _ => None,
        };
        let row = MetricsRow {
            run_id: label.run_id.clone(),
            model_name: label.model_name.clone(),
            num_minima: train.config.num_minima,
            num_shots: train.config.num_shots,
            epoch,
            train_mse,
            eval_mse,
            wall_ms: start.elapsed().as_millis() as u64,
            seed: train_config.seed,
        };
        on_row(&row, &params);
        metrics.push(row);
    }
    Ok(TrainOutcome { params, metrics })
}

/// First epoch whose training MSE is at or below `threshold`.
pub fn epochs_to_threshold(metrics: &[MetricsRow], threshold: f64) -> Option<usize> {
    metrics
        .iter()
        .find(|r| r.train_mse <= threshold)
        .map(|r| r.epoch)
}

/// Trailing moving average of the training MSE with the given window.
pub fn moving_average(metrics: &[MetricsRow], window: usize) -> Vec<f64> {
    let losses: Vec<f64> = metrics.iter().map(|r| r.train_mse).collect();
    losses
        .windows(window.max(1))
        .map(|w| w.iter().sum::<f64>() / w.len() as f64)
        .collect()
}

/// Streams metrics rows to a CSV file with a header row.
pub struct MetricsWriter {
    writer: csv::Writer<std::fs::File>,
}

impl MetricsWriter {
    pub fn create(path: &std::path::Path) -> Result<Self, csv::Error> {
        Ok(Self {
            writer: csv::Writer::from_path(path)?,
        })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<(), csv::Error> {
        self.writer.serialize(row)?;
        self.writer.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &std::path::Path) -> Result<Vec<MetricsRow>, csv::Error> {
    csv::Reader::from_path(path)?.deserialize().collect()
}
