//! Decoder-only transformers over scalar-embedded sequences and the
//! two-layer MLP baseline.
//!
//! Every scalar of an interleaved prompt `x_1, y_1, ..., x_m, y_m` is a token.
//! Tokens enter through a shared `1 -> embed` projection plus a learned
//! positional embedding, pass through pre-norm GPT-2 blocks, and a final
//! `embed -> 1` readout taken at every `x` position predicts the `y` that
//! follows it.
//!
//! Forward and backward passes are written out by hand and generic over
//! [`Real`], so training runs in `f32` while gradient checks run in `f64`.

mod checkpoint;
mod mlp;
mod params;
mod transformer;

use std::fmt;
use std::str::FromStr;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{
    load_checkpoint, parameter_digest, save_checkpoint, CheckpointHeader, TensorEntry,
};
pub use mlp::MlpParams;
pub use params::{reset_parameters, Block, ParameterSet, TensorMut, TensorRef, INIT_STD};
pub use transformer::TransformerParams;

/// Floating-point element type for parameters and activations.
pub trait Real:
    Float
    + NumAssign
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Default
    + fmt::Debug
    + fmt::Display
    + std::iter::Sum
    + Send
    + Sync
{
    const DTYPE: &'static str;

    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite conversion")
    }

    fn to_le_bytes_vec(values: &[Self]) -> Vec<u8>;
    fn from_le_chunk(chunk: &[u8]) -> Self;
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";

    fn to_le_bytes_vec(values: &[Self]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    fn from_le_chunk(chunk: &[u8]) -> Self {
        f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"))
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";

    fn to_le_bytes_vec(values: &[Self]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    fn from_le_chunk(chunk: &[u8]) -> Self {
        f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"))
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("embed_dim {embed_dim} is not divisible by num_heads {num_heads}")]
    HeadsDoNotDivide { embed_dim: usize, num_heads: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence of length {len} exceeds the context length {context}")]
    SequenceTooLong { len: usize, context: usize },
    #[error("sequence length {0} is odd; expected interleaved (x, y) pairs")]
    OddSequence(usize),
    #[error("empty sequence")]
    EmptySequence,
    #[error("{predictions} predictions but {targets} targets")]
    LengthMismatch { predictions: usize, targets: usize },
    #[error("operation expects a {expected} model")]
    WrongKind { expected: &'static str },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Transformer,
    Mlp2,
}

/// The named architectures of the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelPreset {
    Pico,
    Tiny,
    Small,
    Standard,
    Mlp2,
}

impl ModelPreset {
    pub const ALL: [ModelPreset; 5] = [
        ModelPreset::Pico,
        ModelPreset::Tiny,
        ModelPreset::Small,
        ModelPreset::Standard,
        ModelPreset::Mlp2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelPreset::Pico => "pico",
            ModelPreset::Tiny => "tiny",
            ModelPreset::Small => "small",
            ModelPreset::Standard => "standard",
            ModelPreset::Mlp2 => "mlp2",
        }
    }

    /// Architecture for this preset with the given context length.
    pub fn config(self, context_length: usize) -> ModelConfig {
        let (embed_dim, num_heads, num_layers) = match self {
            ModelPreset::Pico => (32, 1, 1),
            ModelPreset::Tiny => (64, 2, 3),
            ModelPreset::Small => (128, 4, 6),
            ModelPreset::Standard => (256, 8, 12),
            ModelPreset::Mlp2 => return ModelConfig::mlp2(DEFAULT_HIDDEN_FEATURES),
        };
        ModelConfig {
            kind: ModelKind::Transformer,
            embed_dim,
            num_heads,
            num_layers,
            context_length,
            hidden_features: 0,
        }
    }

    /// Nominal parameter count advertised for the preset. It only anchors the
    /// order of magnitude of [`ModelConfig::count_parameters`].
    pub fn reported_parameters(self) -> Option<f64> {
        match self {
            ModelPreset::Pico => Some(1.7e5),
            ModelPreset::Tiny => Some(3.4e5),
            ModelPreset::Small => Some(7.8e5),
            ModelPreset::Standard => Some(22.6e5),
            ModelPreset::Mlp2 => None,
        }
    }
}

impl fmt::Display for ModelPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pico" => Ok(ModelPreset::Pico),
            "tiny" => Ok(ModelPreset::Tiny),
            "small" => Ok(ModelPreset::Small),
            "standard" => Ok(ModelPreset::Standard),
            "mlp2" | "2nn" => Ok(ModelPreset::Mlp2),
            other => Err(format!(
                "unknown model '{other}' (expected one of pico, tiny, small, standard, mlp2)"
            )),
        }
    }
}

pub const DEFAULT_CONTEXT_LENGTH: usize = 1024;
pub const DEFAULT_HIDDEN_FEATURES: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub context_length: usize,
    /// Width of the hidden layer; mlp2 only.
    pub hidden_features: usize,
}

impl ModelConfig {
    pub fn mlp2(hidden_features: usize) -> Self {
        Self {
            kind: ModelKind::Mlp2,
            embed_dim: 0,
            num_heads: 0,
            num_layers: 0,
            context_length: 0,
            hidden_features,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self.kind {
            ModelKind::Mlp2 => {
                if self.hidden_features == 0 {
                    return Err(ModelError::InvalidConfig(
                        "hidden_features must be positive".into(),
                    ));
                }
            }
            ModelKind::Transformer => {
                if self.embed_dim == 0 || self.num_heads == 0 || self.num_layers == 0 {
                    return Err(ModelError::InvalidConfig(
                        "embed_dim, num_heads and num_layers must be positive".into(),
                    ));
                }
                if self.context_length == 0 || !self.context_length.is_multiple_of(2) {
                    return Err(ModelError::InvalidConfig(format!(
                        "context_length {} must be positive and even",
                        self.context_length
                    )));
                }
                if !self.embed_dim.is_multiple_of(self.num_heads) {
                    return Err(ModelError::HeadsDoNotDivide {
                        embed_dim: self.embed_dim,
                        num_heads: self.num_heads,
                    });
                }
            }
        }
        Ok(())
    }

    /// Exact number of trainable scalars.
    ///
    /// Transformer: input projection and bias (`2E`), positional table
    /// (`ctx * E`), per block two norms (`4E`), fused QKV (`3E^2 + 3E`),
    /// attention output (`E^2 + E`), MLP up (`4E^2 + 4E`) and down
    /// (`4E^2 + E`), then the final norm (`2E`) and readout (`E + 1`).
    pub fn count_parameters(&self) -> usize {
        match self.kind {
            ModelKind::Mlp2 => 3 * self.hidden_features + 1,
            ModelKind::Transformer => {
                let e = self.embed_dim;
                let per_block = 12 * e * e + 13 * e;
                self.num_layers * per_block + self.context_length * e + 5 * e + 1
            }
        }
    }
}

/// Mean of squared differences.
pub fn mse<T: Real>(predictions: &[T], targets: &[T]) -> Result<T, ModelError> {
    if predictions.len() != targets.len() {
        return Err(ModelError::LengthMismatch {
            predictions: predictions.len(),
            targets: targets.len(),
        });
    }
    if predictions.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    let sum: T = predictions
        .iter()
        .zip(targets)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    Ok(sum / T::from_usize(predictions.len()).unwrap())
}

/// Interleave `xs` and `ys` into `x_1, y_1, ..., x_m, y_m`.
pub fn interleave<T: Copy>(xs: &[T], ys: &[T]) -> Vec<T> {
    xs.iter().zip(ys).flat_map(|(&x, &y)| [x, y]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_listing() {
        let shapes: Vec<_> = [
            ModelPreset::Pico,
            ModelPreset::Tiny,
            ModelPreset::Small,
            ModelPreset::Standard,
        ]
        .iter()
        .map(|p| {
            let c = p.config(1024);
            (c.embed_dim, c.num_heads, c.num_layers)
        })
        .collect();
        assert_eq!(
            shapes,
            vec![(32, 1, 1), (64, 2, 3), (128, 4, 6), (256, 8, 12)]
        );
        for p in ModelPreset::ALL {
            p.config(1024).validate().unwrap();
            assert_eq!(p.name().parse::<ModelPreset>().unwrap(), p);
        }
    }

    #[test]
    fn mlp2_count() {
        assert_eq!(ModelPreset::Mlp2.config(1024).count_parameters(), 301);
    }

    #[test]
    fn pico_count_by_hand() {
        // 1 block of 12*32^2 + 13*32, 1024*32 positions, 5*32 + 1 edges
        let n = ModelPreset::Pico.config(1024).count_parameters();
        assert_eq!(n, 12_704 + 32_768 + 161);
    }

    #[test]
    fn reported_counts_same_order_of_magnitude() {
        for p in ModelPreset::ALL {
            if let Some(reported) = p.reported_parameters() {
                let ratio = reported / p.config(1024).count_parameters() as f64;
                assert!((0.1..10.0).contains(&ratio), "{p}: ratio {ratio}");
            }
        }
    }

    #[test]
    fn doubling_embed_quadruples_blocks() {
        let base = ModelConfig {
            context_length: 0,
            ..ModelPreset::Small.config(2)
        };
        let wide = ModelConfig {
            embed_dim: 256,
            ..base.clone()
        };
        let ratio = wide.count_parameters() as f64 / base.count_parameters() as f64;
        assert!((ratio - 4.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn config_validation() {
        let bad = ModelConfig {
            num_heads: 3,
            ..ModelPreset::Pico.config(1024)
        };
        assert!(matches!(
            bad.validate(),
            Err(ModelError::HeadsDoNotDivide { .. })
        ));
        let odd = ModelPreset::Pico.config(7);
        assert!(odd.validate().is_err());
        assert!(ModelConfig::mlp2(0).validate().is_err());
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert_eq!(mse(&[3.0], &[1.0]).unwrap(), 4.0);
        assert!(mse::<f64>(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mse::<f64>(&[], &[]).is_err());
    }

    #[test]
    fn interleave_pairs() {
        assert_eq!(interleave(&[1, 3], &[2, 4]), vec![1, 2, 3, 4]);
    }
}
