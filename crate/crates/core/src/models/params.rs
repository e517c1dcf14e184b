use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::mlp::MlpParams;
use super::transformer::TransformerParams;
use super::{ModelConfig, ModelError, ModelKind, Real};

/// Standard deviation of the normal initialisation of transformer
/// projection and embedding weights.
pub const INIT_STD: f64 = 0.02;

/// Per-layer transformer weights. Matrices are stored `in x out` so that a
/// row-vector activation multiplies on the left.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub ln1_gain: Array1<T>,
    pub ln1_bias: Array1<T>,
    pub w_qkv: Array2<T>,
    pub b_qkv: Array1<T>,
    pub w_attn_out: Array2<T>,
    pub b_attn_out: Array1<T>,
    pub ln2_gain: Array1<T>,
    pub ln2_bias: Array1<T>,
    pub w_mlp_up: Array2<T>,
    pub b_mlp_up: Array1<T>,
    pub w_mlp_down: Array2<T>,
    pub b_mlp_down: Array1<T>,
}

/// Borrowed view of one named parameter tensor.
#[derive(Debug)]
pub struct TensorRef<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

#[derive(Debug)]
pub struct TensorMut<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [T],
}

/// All trainable weights of one model.
// Both variants keep their weights on the heap; only the struct headers differ.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq)]
pub enum ParameterSet<T> {
    Transformer(TransformerParams<T>),
    Mlp2(MlpParams<T>),
}

impl<T: Real> ParameterSet<T> {
    pub fn kind(&self) -> ModelKind {
        match self {
            ParameterSet::Transformer(_) => ModelKind::Transformer,
            ParameterSet::Mlp2(_) => ModelKind::Mlp2,
        }
    }

    /// A zero-filled set with the same layout, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.fill(T::zero());
        out
    }

    pub fn fill(&mut self, value: T) {
        for t in self.tensors_mut() {
            t.data.fill(value);
        }
    }

    /// Named tensors in a fixed canonical order.
    pub fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        match self {
            ParameterSet::Transformer(p) => p.tensors(),
            ParameterSet::Mlp2(p) => p.tensors(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>> {
        match self {
            ParameterSet::Transformer(p) => p.tensors_mut(),
            ParameterSet::Mlp2(p) => p.tensors_mut(),
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Element type conversion with the same layout.
    pub fn cast<U: Real>(&self) -> ParameterSet<U> {
        match self {
            ParameterSet::Transformer(p) => ParameterSet::Transformer(p.cast()),
            ParameterSet::Mlp2(p) => ParameterSet::Mlp2(p.cast()),
        }
    }

    pub fn as_transformer(&self) -> Result<&TransformerParams<T>, ModelError> {
        match self {
            ParameterSet::Transformer(p) => Ok(p),
            _ => Err(ModelError::WrongKind {
                expected: "transformer",
            }),
        }
    }

    pub fn as_mlp2(&self) -> Result<&MlpParams<T>, ModelError> {
        match self {
            ParameterSet::Mlp2(p) => Ok(p),
            _ => Err(ModelError::WrongKind { expected: "mlp2" }),
        }
    }
}

/// Fresh weights for `config`, deterministic in `seed`.
///
/// Transformers follow the GPT-2 convention: normal(0, 0.02) for every
/// projection and embedding, zero biases, unit normalisation gains. The MLP
/// uses the fan-in uniform initialisation of a default linear layer,
/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases alike.
pub fn reset_parameters<T: Real>(
    config: &ModelConfig,
    seed: u64,
) -> Result<ParameterSet<T>, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match config.kind {
        ModelKind::Transformer => ParameterSet::Transformer(init_transformer(config, &mut rng)),
        ModelKind::Mlp2 => ParameterSet::Mlp2(init_mlp(config.hidden_features, &mut rng)),
    })
}

fn normal_matrix<T: Real>(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<T> {
    let dist = Normal::new(0.0, INIT_STD).expect("valid std");
    Array2::from_shape_simple_fn((rows, cols), || T::from_f64_lossy(dist.sample(rng)))
}

fn normal_vector<T: Real>(len: usize, rng: &mut impl Rng) -> Array1<T> {
    normal_matrix(1, len, rng)
        .into_shape_with_order(len)
        .unwrap()
}

fn init_transformer<T: Real>(config: &ModelConfig, rng: &mut impl Rng) -> TransformerParams<T> {
    let e = config.embed_dim;
    let zeros = |n| Array1::<T>::zeros(n);
    let ones = |n| Array1::<T>::ones(n);
    let input_weight = normal_vector(e, rng);
    let positions = normal_matrix(config.context_length, e, rng);
    let blocks = (0..config.num_layers)
        .map(|_| Block {
            ln1_gain: ones(e),
            ln1_bias: zeros(e),
            w_qkv: normal_matrix(e, 3 * e, rng),
            b_qkv: zeros(3 * e),
            w_attn_out: normal_matrix(e, e, rng),
            b_attn_out: zeros(e),
            ln2_gain: ones(e),
            ln2_bias: zeros(e),
            w_mlp_up: normal_matrix(e, 4 * e, rng),
            b_mlp_up: zeros(4 * e),
            w_mlp_down: normal_matrix(4 * e, e, rng),
            b_mlp_down: zeros(e),
        })
        .collect();
    let readout = normal_vector(e, rng);
    TransformerParams {
        config: config.clone(),
        input_weight,
        input_bias: zeros(e),
        positions,
        blocks,
        lnf_gain: ones(e),
        lnf_bias: zeros(e),
        readout,
        readout_bias: zeros(1),
    }
}

fn init_mlp<T: Real>(hidden: usize, rng: &mut impl Rng) -> MlpParams<T> {
    let mut uniform = |fan_in: usize, len: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
        Array1::from_shape_simple_fn(len, || T::from_f64_lossy(dist.sample(rng)))
    };
    let w1 = uniform(1, hidden);
    let b1 = uniform(1, hidden);
    let w2 = uniform(hidden, hidden);
    let b2 = uniform(hidden, 1);
    MlpParams { w1, b1, w2, b2 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelPreset;

    #[test]
    fn same_seed_same_parameters() {
        let cfg = ModelPreset::Pico.config(64);
        let a = reset_parameters::<f32>(&cfg, 7).unwrap();
        let b = reset_parameters::<f32>(&cfg, 7).unwrap();
        let c = reset_parameters::<f32>(&cfg, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn counts_match_formula() {
        for preset in ModelPreset::ALL {
            let cfg = preset.config(1024);
            let params = reset_parameters::<f32>(&cfg, 0).unwrap();
            assert_eq!(params.num_parameters(), cfg.count_parameters(), "{preset}");
        }
    }

    #[test]
    fn projection_init_std() {
        let cfg = ModelPreset::Tiny.config(1024);
        let params = reset_parameters::<f64>(&cfg, 3).unwrap();
        let values: Vec<f64> = params
            .tensors()
            .iter()
            .filter(|t| t.name.contains("w_") || t.name == "positions")
            .flat_map(|t| t.data.iter().copied())
            .collect();
        assert!(values.len() >= 10_000);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std - INIT_STD).abs() <= 0.2 * INIT_STD, "std {std}");
    }

    #[test]
    fn gains_ones_biases_zero() {
        let params = reset_parameters::<f32>(&ModelPreset::Pico.config(8), 1).unwrap();
        for t in params.tensors() {
            if t.name.ends_with("gain") {
                assert!(t.data.iter().all(|&v| v == 1.0), "{}", t.name);
            }
            if t.name.contains("bias") || t.name.starts_with("blocks.0.b_") {
                assert!(t.data.iter().all(|&v| v == 0.0), "{}", t.name);
            }
        }
    }

    #[test]
    fn mlp_init_bounds() {
        let params = reset_parameters::<f64>(&ModelConfig::mlp2(100), 5).unwrap();
        let mlp = params.as_mlp2().unwrap();
        assert!(mlp.w1.iter().all(|v| v.abs() <= 1.0));
        assert!(mlp.w2.iter().all(|v| v.abs() <= 0.1));
        assert!(params.as_transformer().is_err());
    }

    #[test]
    fn cast_round_trip_preserves_f32_values() {
        let params = reset_parameters::<f32>(&ModelPreset::Pico.config(8), 2).unwrap();
        let back: ParameterSet<f32> = params.cast::<f64>().cast();
        assert_eq!(params, back);
    }
}
