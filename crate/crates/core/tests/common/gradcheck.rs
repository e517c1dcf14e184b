//! Central finite differences over every scalar of a parameter set.

use minima_icl::models::{mse, ParameterSet};

/// Per-tensor comparison of analytic and numeric gradients.
#[derive(Debug)]
pub struct GroupError {
    pub name: String,
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)`; zero when
    /// both norms are below `floor`.
    pub relative: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

/// Loss of the prompt `(xs, ys)` under `params`, computed through the
/// forward pass only.
pub fn prompt_loss(params: &ParameterSet<f64>, xs: &[f64], ys: &[f64]) -> f64 {
    let preds = match params {
        ParameterSet::Transformer(p) => p.predict(xs, ys).unwrap(),
        ParameterSet::Mlp2(p) => p.forward(xs),
    };
    mse(&preds, ys).unwrap()
}

/// Numeric gradient at every `stride`-th scalar of each tensor; the other
/// entries stay zero and are skipped by [`compare`] given the same stride.
pub fn numeric_gradient(
    params: &ParameterSet<f64>,
    step: f64,
    stride: usize,
    loss: impl Fn(&ParameterSet<f64>) -> f64,
) -> ParameterSet<f64> {
    let mut grads = params.zeros_like();
    let mut probe = params.clone();
    let layout: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();
    for (ti, &len) in layout.iter().enumerate() {
        for i in (0..len).step_by(stride) {
            let original = probe.tensors()[ti].data[i];
            probe.tensors_mut()[ti].data[i] = original + step;
            let up = loss(&probe);
            probe.tensors_mut()[ti].data[i] = original - step;
            let down = loss(&probe);
            probe.tensors_mut()[ti].data[i] = original;
            grads.tensors_mut()[ti].data[i] = (up - down) / (2.0 * step);
        }
    }
    grads
}

pub fn compare(
    analytic: &ParameterSet<f64>,
    numeric: &ParameterSet<f64>,
    stride: usize,
    floor: f64,
) -> Vec<GroupError> {
    analytic
        .tensors()
        .iter()
        .zip(numeric.tensors())
        .map(|(a, n)| {
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let pick = |v: &[f64]| v.iter().step_by(stride).copied().collect::<Vec<_>>();
            let (a_sel, n_sel) = (pick(a.data), pick(n.data));
            let diff: Vec<f64> = a_sel.iter().zip(&n_sel).map(|(x, y)| x - y).collect();
            let (an, nn) = (norm(&a_sel), norm(&n_sel));
            let scale = an.max(nn);
            GroupError {
                name: a.name.clone(),
                relative: if scale < floor {
                    0.0
                } else {
                    norm(&diff) / scale
                },
                analytic_norm: an,
                numeric_norm: nn,
            }
        })
        .collect()
}
