use crate::models::{ParameterSet, Real};

use super::{TrainConfig, TrainError};

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParameterSet<T>) -> Self {
        let lens: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();
        Self::for_lengths(&lens)
    }

    /// Zero moments for tensors of the given lengths.
    pub fn for_lengths(lens: &[usize]) -> Self {
        let zeros: Vec<Vec<T>> = lens.iter().map(|&n| vec![T::zero(); n]).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// One AdamW update with decoupled weight decay:
///
/// ```text
/// p <- p * (1 - lr * wd)
/// m <- b1 m + (1 - b1) g        v <- b2 v + (1 - b2) g^2
/// p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
/// ```
///
/// `step_index` is 1-based. Gradients are checked for finiteness before
/// anything is modified.
pub fn adamw_step<T: Real>(
    params: &mut ParameterSet<T>,
    grads: &ParameterSet<T>,
    state: &mut AdamState<T>,
    config: &TrainConfig,
    step_index: u64,
) -> Result<(), TrainError> {
    let grad_tensors = grads.tensors();
    let names: Vec<&str> = grad_tensors.iter().map(|t| t.name.as_str()).collect();
    let grad_slices: Vec<&[T]> = grad_tensors.iter().map(|t| t.data).collect();
    let mut param_tensors = params.tensors_mut();
    let mut param_slices: Vec<&mut [T]> = param_tensors.iter_mut().map(|t| &mut *t.data).collect();
    adamw_update(
        &mut param_slices,
        &grad_slices,
        &names,
        state,
        config,
        step_index,
    )
}

/// [`adamw_step`] on raw tensors; `names` label gradients in errors.
pub fn adamw_update<T: Real>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    names: &[&str],
    state: &mut AdamState<T>,
    config: &TrainConfig,
    step_index: u64,
) -> Result<(), TrainError> {
    assert!(step_index >= 1, "AdamW steps are 1-based");
    assert!(
        params.len() == grads.len() && grads.len() == state.first.len(),
        "parameter, gradient and state layouts differ"
    );
    if let Some(i) = grads.iter().position(|g| g.iter().any(|v| !v.is_finite())) {
        let name = names
            .get(i)
            .map_or_else(|| i.to_string(), |n| n.to_string());
        return Err(TrainError::NonFiniteGradient(name));
    }

    let t = step_index as i32;
    let lr = config.learning_rate;
    let first_correction = 1.0 - config.adam_beta1.powi(t);
    let second_correction = 1.0 - config.adam_beta2.powi(t);

    let c = T::from_f64_lossy;
    let decay = c(1.0 - lr * config.weight_decay);
    let b1 = c(config.adam_beta1);
    let b2 = c(config.adam_beta2);
    let one_minus_b1 = c(1.0 - config.adam_beta1);
    let one_minus_b2 = c(1.0 - config.adam_beta2);
    let step_size = c(lr / first_correction);
    let inv_sqrt_second = c(1.0 / second_correction.sqrt());
    let eps = c(config.adam_epsilon);

    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        // Equal-length slices let the loop vectorise.
        let n = p.len();
        let (p, g, m, v) = (&mut p[..n], &g[..n], &mut m[..n], &mut v[..n]);
        for i in 0..n {
            let gi = g[i];
            let mi = b1 * m[i] + one_minus_b1 * gi;
            let vi = b2 * v[i] + one_minus_b2 * gi * gi;
            m[i] = mi;
            v[i] = vi;
            p[i] = p[i] * decay - step_size * mi / (vi.sqrt() * inv_sqrt_second + eps);
        }
    }
    Ok(())
}
