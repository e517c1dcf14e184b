use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array, Array1, Array2, ArrayView2, Axis, Dimension, Zip};

use super::params::{Block, TensorMut, TensorRef};
use super::{interleave, mse, ModelConfig, ModelError, Real};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Weights of a pre-norm decoder-only transformer with scalar tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerParams<T> {
    pub config: ModelConfig,
    /// `1 -> embed` projection shared by `x` and `y` tokens.
    pub input_weight: Array1<T>,
    pub input_bias: Array1<T>,
    /// Learned positional table, `context_length x embed`.
    pub positions: Array2<T>,
    pub blocks: Vec<Block<T>>,
    pub lnf_gain: Array1<T>,
    pub lnf_bias: Array1<T>,
    /// `embed -> 1` readout.
    pub readout: Array1<T>,
    pub readout_bias: Array1<T>,
}

fn tref<'a, T, D: Dimension>(name: impl Into<String>, a: &'a Array<T, D>) -> TensorRef<'a, T> {
    TensorRef {
        name: name.into(),
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("standard layout"),
    }
}

fn tmut<'a, T, D: Dimension>(name: impl Into<String>, a: &'a mut Array<T, D>) -> TensorMut<'a, T> {
    TensorMut {
        name: name.into(),
        shape: a.shape().to_vec(),
        data: a.as_slice_mut().expect("standard layout"),
    }
}

struct NormCache<T> {
    normalized: Array2<T>,
    inv_std: Array1<T>,
}

struct BlockCache<T> {
    ln1: NormCache<T>,
    attn_in: Array2<T>,
    qkv: Array2<T>,
    /// Per-head causal attention weights, `seq x seq`.
    probs: Vec<Array2<T>>,
    heads: Array2<T>,
    ln2: NormCache<T>,
    mlp_in: Array2<T>,
    pre_act: Array2<T>,
    act: Array2<T>,
}

struct ForwardCache<T> {
    tokens: Vec<T>,
    blocks: Vec<BlockCache<T>>,
    lnf: NormCache<T>,
    final_hidden: Array2<T>,
}

fn layer_norm<T: Real>(
    x: ArrayView2<T>,
    gain: &Array1<T>,
    bias: &Array1<T>,
) -> (Array2<T>, NormCache<T>) {
    let (rows, width) = x.dim();
    let eps = T::from_f64_lossy(LAYER_NORM_EPS);
    let n = T::from_usize(width).unwrap();
    let mut normalized = Array2::zeros((rows, width));
    let mut inv_std = Array1::zeros(rows);
    for (i, row) in x.outer_iter().enumerate() {
        let mean = row.sum() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let r = T::one() / (var + eps).sqrt();
        inv_std[i] = r;
        Zip::from(normalized.row_mut(i))
            .and(&row)
            .for_each(|o, &v| *o = (v - mean) * r);
    }
    let out = &normalized * gain + bias;
    (
        out,
        NormCache {
            normalized,
            inv_std,
        },
    )
}

fn layer_norm_backward<T: Real>(
    grad_out: &Array2<T>,
    cache: &NormCache<T>,
    gain: &Array1<T>,
    grad_gain: &mut Array1<T>,
    grad_bias: &mut Array1<T>,
) -> Array2<T> {
    *grad_gain += &(grad_out * &cache.normalized).sum_axis(Axis(0));
    *grad_bias += &grad_out.sum_axis(Axis(0));
    let grad_norm = grad_out * gain;
    let n = T::from_usize(grad_out.ncols()).unwrap();
    let mut grad_in = Array2::zeros(grad_out.raw_dim());
    for (i, (g, xh)) in grad_norm
        .outer_iter()
        .zip(cache.normalized.outer_iter())
        .enumerate()
    {
        let mean_g = g.sum() / n;
        let mean_gx = g.iter().zip(&xh).map(|(&a, &b)| a * b).sum::<T>() / n;
        let r = cache.inv_std[i];
        Zip::from(grad_in.row_mut(i))
            .and(&g)
            .and(&xh)
            .for_each(|o, &gv, &xv| *o = r * (gv - mean_g - xv * mean_gx));
    }
    grad_in
}

// tanh approximation, as in GPT-2
fn gelu<T: Real>(x: T) -> T {
    let c = T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64_lossy(0.044715);
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64_lossy(0.044715);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * k * x * x)
}

/// Row-wise softmax over the lower triangle of `scores` (after scaling);
/// entries above the diagonal become exactly zero.
fn causal_softmax<T: Real>(scores: &mut Array2<T>, scale: T) {
    for (i, mut row) in scores.outer_iter_mut().enumerate() {
        let (visible, hidden) = row.view_mut().split_at(Axis(0), i + 1);
        let mut visible = visible;
        let max = visible
            .iter()
            .fold(T::neg_infinity(), |m, &v| m.max(v * scale));
        let mut sum = T::zero();
        visible.mapv_inplace(|v| {
            let e = (v * scale - max).exp();
            sum += e;
            e
        });
        visible.mapv_inplace(|v| v / sum);
        let mut hidden = hidden;
        hidden.fill(T::zero());
    }
}

impl<T: Real> TransformerParams<T> {
    pub fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        let mut out = vec![
            tref("input_weight", &self.input_weight),
            tref("input_bias", &self.input_bias),
            tref("positions", &self.positions),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("blocks.{i}.");
            out.extend([
                tref(p.clone() + "ln1_gain", &b.ln1_gain),
                tref(p.clone() + "ln1_bias", &b.ln1_bias),
                tref(p.clone() + "w_qkv", &b.w_qkv),
                tref(p.clone() + "b_qkv", &b.b_qkv),
                tref(p.clone() + "w_attn_out", &b.w_attn_out),
                tref(p.clone() + "b_attn_out", &b.b_attn_out),
                tref(p.clone() + "ln2_gain", &b.ln2_gain),
                tref(p.clone() + "ln2_bias", &b.ln2_bias),
                tref(p.clone() + "w_mlp_up", &b.w_mlp_up),
                tref(p.clone() + "b_mlp_up", &b.b_mlp_up),
                tref(p.clone() + "w_mlp_down", &b.w_mlp_down),
                tref(p + "b_mlp_down", &b.b_mlp_down),
            ]);
        }
        out.extend([
            tref("lnf_gain", &self.lnf_gain),
            tref("lnf_bias", &self.lnf_bias),
            tref("readout", &self.readout),
            tref("readout_bias", &self.readout_bias),
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>> {
        let TransformerParams {
            input_weight,
            input_bias,
            positions,
            blocks,
            lnf_gain,
            lnf_bias,
            readout,
            readout_bias,
            ..
        } = self;
        let mut out = vec![
            tmut("input_weight", input_weight),
            tmut("input_bias", input_bias),
            tmut("positions", positions),
        ];
        for (i, b) in blocks.iter_mut().enumerate() {
            let p = format!("blocks.{i}.");
            out.extend([
                tmut(p.clone() + "ln1_gain", &mut b.ln1_gain),
                tmut(p.clone() + "ln1_bias", &mut b.ln1_bias),
                tmut(p.clone() + "w_qkv", &mut b.w_qkv),
                tmut(p.clone() + "b_qkv", &mut b.b_qkv),
                tmut(p.clone() + "w_attn_out", &mut b.w_attn_out),
                tmut(p.clone() + "b_attn_out", &mut b.b_attn_out),
                tmut(p.clone() + "ln2_gain", &mut b.ln2_gain),
                tmut(p.clone() + "ln2_bias", &mut b.ln2_bias),
                tmut(p.clone() + "w_mlp_up", &mut b.w_mlp_up),
                tmut(p.clone() + "b_mlp_up", &mut b.b_mlp_up),
                tmut(p.clone() + "w_mlp_down", &mut b.w_mlp_down),
                tmut(p + "b_mlp_down", &mut b.b_mlp_down),
            ]);
        }
        out.extend([
            tmut("lnf_gain", lnf_gain),
            tmut("lnf_bias", lnf_bias),
            tmut("readout", readout),
            tmut("readout_bias", readout_bias),
        ]);
        out
    }

    pub fn cast<U: Real>(&self) -> TransformerParams<U> {
        fn c<T: Real, U: Real, D: Dimension>(a: &Array<T, D>) -> Array<U, D> {
            a.mapv(|v| U::from_f64_lossy(v.to_f64().unwrap()))
        }
        TransformerParams {
            config: self.config.clone(),
            input_weight: c(&self.input_weight),
            input_bias: c(&self.input_bias),
            positions: c(&self.positions),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    ln1_gain: c(&b.ln1_gain),
                    ln1_bias: c(&b.ln1_bias),
                    w_qkv: c(&b.w_qkv),
                    b_qkv: c(&b.b_qkv),
                    w_attn_out: c(&b.w_attn_out),
                    b_attn_out: c(&b.b_attn_out),
                    ln2_gain: c(&b.ln2_gain),
                    ln2_bias: c(&b.ln2_bias),
                    w_mlp_up: c(&b.w_mlp_up),
                    b_mlp_up: c(&b.b_mlp_up),
                    w_mlp_down: c(&b.w_mlp_down),
                    b_mlp_down: c(&b.b_mlp_down),
                })
                .collect(),
            lnf_gain: c(&self.lnf_gain),
            lnf_bias: c(&self.lnf_bias),
            readout: c(&self.readout),
            readout_bias: c(&self.readout_bias),
        }
    }

    fn check_sequence(&self, len: usize) -> Result<(), ModelError> {
        if len == 0 {
            return Err(ModelError::EmptySequence);
        }
        if !len.is_multiple_of(2) {
            return Err(ModelError::OddSequence(len));
        }
        if len > self.config.context_length {
            return Err(ModelError::SequenceTooLong {
                len,
                context: self.config.context_length,
            });
        }
        Ok(())
    }

    /// Predictions for an interleaved sequence `x_1, y_1, ..., x_m, y_m`:
    /// one value per `x` position, read out under a causal mask, so the
    /// `k`-th prediction sees `x_1, y_1, ..., x_k` only.
    pub fn forward(&self, sequence: &[T]) -> Result<Vec<T>, ModelError> {
        self.check_sequence(sequence.len())?;
        let cache = self.forward_cached(sequence);
        Ok(self.readout_at_x(&cache.final_hidden))
    }

    /// Predictions for a prompt given as separate inputs and labels.
    pub fn predict(&self, xs: &[T], ys: &[T]) -> Result<Vec<T>, ModelError> {
        if xs.len() != ys.len() {
            return Err(ModelError::LengthMismatch {
                predictions: xs.len(),
                targets: ys.len(),
            });
        }
        self.forward(&interleave(xs, ys))
    }

    /// MSE over all `x` positions of one prompt; the gradient of that loss
    /// is added into `grads`.
    pub fn loss_and_grad(
        &self,
        xs: &[T],
        ys: &[T],
        grads: &mut TransformerParams<T>,
    ) -> Result<T, ModelError> {
        if xs.len() != ys.len() {
            return Err(ModelError::LengthMismatch {
                predictions: xs.len(),
                targets: ys.len(),
            });
        }
        let sequence = interleave(xs, ys);
        self.check_sequence(sequence.len())?;
        let cache = self.forward_cached(&sequence);
        let preds = self.readout_at_x(&cache.final_hidden);
        let loss = mse(&preds, ys)?;
        let scale = T::from_f64_lossy(2.0) / T::from_usize(ys.len()).unwrap();
        let grad_preds: Vec<T> = preds
            .iter()
            .zip(ys)
            .map(|(&p, &y)| scale * (p - y))
            .collect();
        self.backward(&cache, &grad_preds, grads);
        Ok(loss)
    }

    fn readout_at_x(&self, hidden: &Array2<T>) -> Vec<T> {
        let bias = self.readout_bias[0];
        hidden
            .outer_iter()
            .step_by(2)
            .map(|row| row.dot(&self.readout) + bias)
            .collect()
    }

    fn forward_cached(&self, sequence: &[T]) -> ForwardCache<T> {
        let len = sequence.len();
        let e = self.config.embed_dim;
        let heads = self.config.num_heads;
        let d = self.config.head_dim();
        let scale = T::one() / T::from_usize(d).unwrap().sqrt();

        let mut hidden = self.positions.slice(s![..len, ..]).to_owned();
        for (mut row, &tok) in hidden.outer_iter_mut().zip(sequence) {
            Zip::from(&mut row)
                .and(&self.input_weight)
                .and(&self.input_bias)
                .for_each(|h, &w, &b| *h = *h + tok * w + b);
        }

        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (attn_in, ln1) = layer_norm(hidden.view(), &block.ln1_gain, &block.ln1_bias);
            let qkv = attn_in.dot(&block.w_qkv) + &block.b_qkv;
            let mut head_out = Array2::zeros((len, e));
            let mut probs = Vec::with_capacity(heads);
            for h in 0..heads {
                let q = qkv.slice(s![.., h * d..(h + 1) * d]);
                let k = qkv.slice(s![.., e + h * d..e + (h + 1) * d]);
                let v = qkv.slice(s![.., 2 * e + h * d..2 * e + (h + 1) * d]);
                let mut p = q.dot(&k.t());
                causal_softmax(&mut p, scale);
                general_mat_mul(
                    T::one(),
                    &p,
                    &v,
                    T::zero(),
                    &mut head_out.slice_mut(s![.., h * d..(h + 1) * d]),
                );
                probs.push(p);
            }
            hidden = hidden + head_out.dot(&block.w_attn_out) + &block.b_attn_out;

            let (mlp_in, ln2) = layer_norm(hidden.view(), &block.ln2_gain, &block.ln2_bias);
            let pre_act = mlp_in.dot(&block.w_mlp_up) + &block.b_mlp_up;
            let act = pre_act.mapv(gelu);
            hidden = hidden + act.dot(&block.w_mlp_down) + &block.b_mlp_down;

            caches.push(BlockCache {
                ln1,
                attn_in,
                qkv,
                probs,
                heads: head_out,
                ln2,
                mlp_in,
                pre_act,
                act,
            });
        }
        let (final_hidden, lnf) = layer_norm(hidden.view(), &self.lnf_gain, &self.lnf_bias);
        ForwardCache {
            tokens: sequence.to_vec(),
            blocks: caches,
            lnf,
            final_hidden,
        }
    }

    fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_preds: &[T],
        grads: &mut TransformerParams<T>,
    ) {
        let len = cache.tokens.len();
        let e = self.config.embed_dim;
        let heads = self.config.num_heads;
        let d = self.config.head_dim();
        let scale = T::one() / T::from_usize(d).unwrap().sqrt();

        let mut grad_final = Array2::<T>::zeros((len, e));
        for (k, &g) in grad_preds.iter().enumerate() {
            let row = cache.final_hidden.row(2 * k);
            grads.readout.scaled_add(g, &row);
            grads.readout_bias[0] += g;
            grad_final.row_mut(2 * k).scaled_add(g, &self.readout);
        }
        let mut grad_hidden = layer_norm_backward(
            &grad_final,
            &cache.lnf,
            &self.lnf_gain,
            &mut grads.lnf_gain,
            &mut grads.lnf_bias,
        );

        for ((block, bc), gb) in self
            .blocks
            .iter()
            .zip(&cache.blocks)
            .zip(grads.blocks.iter_mut())
            .rev()
        {
            // MLP sublayer; the residual passes grad_hidden through unchanged
            general_mat_mul(
                T::one(),
                &bc.act.t(),
                &grad_hidden,
                T::one(),
                &mut gb.w_mlp_down,
            );
            gb.b_mlp_down += &grad_hidden.sum_axis(Axis(0));
            let mut grad_pre = grad_hidden.dot(&block.w_mlp_down.t());
            Zip::from(&mut grad_pre)
                .and(&bc.pre_act)
                .for_each(|g, &x| *g *= gelu_grad(x));
            general_mat_mul(
                T::one(),
                &bc.mlp_in.t(),
                &grad_pre,
                T::one(),
                &mut gb.w_mlp_up,
            );
            gb.b_mlp_up += &grad_pre.sum_axis(Axis(0));
            let grad_mlp_in = grad_pre.dot(&block.w_mlp_up.t());
            grad_hidden += &layer_norm_backward(
                &grad_mlp_in,
                &bc.ln2,
                &block.ln2_gain,
                &mut gb.ln2_gain,
                &mut gb.ln2_bias,
            );

            // attention sublayer
            general_mat_mul(
                T::one(),
                &bc.heads.t(),
                &grad_hidden,
                T::one(),
                &mut gb.w_attn_out,
            );
            gb.b_attn_out += &grad_hidden.sum_axis(Axis(0));
            let grad_heads = grad_hidden.dot(&block.w_attn_out.t());
            let mut grad_qkv = Array2::<T>::zeros((len, 3 * e));
            for h in 0..heads {
                let q = bc.qkv.slice(s![.., h * d..(h + 1) * d]);
                let k = bc.qkv.slice(s![.., e + h * d..e + (h + 1) * d]);
                let v = bc.qkv.slice(s![.., 2 * e + h * d..2 * e + (h + 1) * d]);
                let p = &bc.probs[h];
                let grad_out = grad_heads.slice(s![.., h * d..(h + 1) * d]);

                let mut grad_scores = grad_out.dot(&v.t());
                for (mut gs, pr) in grad_scores.outer_iter_mut().zip(p.outer_iter()) {
                    let inner = gs.iter().zip(&pr).map(|(&a, &b)| a * b).sum::<T>();
                    Zip::from(&mut gs)
                        .and(&pr)
                        .for_each(|g, &pv| *g = pv * (*g - inner) * scale);
                }
                general_mat_mul(
                    T::one(),
                    &grad_scores,
                    &k,
                    T::zero(),
                    &mut grad_qkv.slice_mut(s![.., h * d..(h + 1) * d]),
                );
                general_mat_mul(
                    T::one(),
                    &grad_scores.t(),
                    &q,
                    T::zero(),
                    &mut grad_qkv.slice_mut(s![.., e + h * d..e + (h + 1) * d]),
                );
                general_mat_mul(
                    T::one(),
                    &p.t(),
                    &grad_out,
                    T::zero(),
                    &mut grad_qkv.slice_mut(s![.., 2 * e + h * d..2 * e + (h + 1) * d]),
                );
            }
            general_mat_mul(
                T::one(),
                &bc.attn_in.t(),
                &grad_qkv,
                T::one(),
                &mut gb.w_qkv,
            );
            gb.b_qkv += &grad_qkv.sum_axis(Axis(0));
            let grad_attn_in = grad_qkv.dot(&block.w_qkv.t());
            grad_hidden += &layer_norm_backward(
                &grad_attn_in,
                &bc.ln1,
                &block.ln1_gain,
                &mut gb.ln1_gain,
                &mut gb.ln1_bias,
            );
        }

        grads
            .positions
            .slice_mut(s![..len, ..])
            .zip_mut_with(&grad_hidden, |g, &v| *g += v);
        grads.input_bias += &grad_hidden.sum_axis(Axis(0));
        for (row, &tok) in grad_hidden.outer_iter().zip(&cache.tokens) {
            grads.input_weight.scaled_add(tok, &row);
        }
    }
}
