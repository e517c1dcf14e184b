use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};

use super::params::{TensorMut, TensorRef};
use super::{mse, ModelError, Real};

/// Two-layer perceptron `1 -> hidden -> 1` with a ReLU in between.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    pub w1: Array1<T>,
    pub b1: Array1<T>,
    pub w2: Array1<T>,
    /// Single output bias, stored as a length-1 array.
    pub b2: Array1<T>,
}

impl<T: Real> MlpParams<T> {
    pub fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        [
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
        .into_iter()
        .map(|(name, a)| TensorRef {
            name: name.to_string(),
            shape: vec![a.len()],
            data: a.as_slice().expect("contiguous"),
        })
        .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>> {
        let MlpParams { w1, b1, w2, b2 } = self;
        [("w1", w1), ("b1", b1), ("w2", w2), ("b2", b2)]
            .into_iter()
            .map(|(name, a)| TensorMut {
                name: name.to_string(),
                shape: vec![a.len()],
                data: a.as_slice_mut().expect("contiguous"),
            })
            .collect()
    }

    pub fn cast<U: Real>(&self) -> MlpParams<U> {
        let c = |a: &Array1<T>| a.mapv(|v| U::from_f64_lossy(v.to_f64().unwrap()));
        MlpParams {
            w1: c(&self.w1),
            b1: c(&self.b1),
            w2: c(&self.w2),
            b2: c(&self.b2),
        }
    }

    fn pre_activation(&self, xs: &[T]) -> Array2<T> {
        let column = ArrayView1::from(xs).insert_axis(Axis(1));
        &column * &self.w1.view().insert_axis(Axis(0)) + &self.b1
    }

    /// `W2 . relu(W1 x + b1) + b2` for every input independently.
    pub fn forward(&self, xs: &[T]) -> Vec<T> {
        let hidden = self.pre_activation(xs).mapv_into(|v| v.max(T::zero()));
        (hidden.dot(&self.w2) + self.b2[0]).to_vec()
    }

    /// Pointwise MSE over the batch; its gradient is added into `grads`.
    pub fn loss_and_grad(
        &self,
        xs: &[T],
        ys: &[T],
        grads: &mut MlpParams<T>,
    ) -> Result<T, ModelError> {
        let pre = self.pre_activation(xs);
        let hidden = pre.mapv(|v| v.max(T::zero()));
        let preds = hidden.dot(&self.w2) + self.b2[0];
        let loss = mse(preds.as_slice().unwrap(), ys)?;
        let scale = T::from_f64_lossy(2.0) / T::from_usize(ys.len()).unwrap();
        let grad_preds = Array1::from_iter(preds.iter().zip(ys).map(|(&p, &y)| scale * (p - y)));

        grads.w2 += &hidden.t().dot(&grad_preds);
        grads.b2[0] += grad_preds.sum();
        let mut grad_pre = grad_preds.insert_axis(Axis(1)) * &self.w2;
        Zip::from(&mut grad_pre).and(&pre).for_each(|g, &p| {
            if p <= T::zero() {
                *g = T::zero();
            }
        });
        grads.w1 += &grad_pre.t().dot(&ArrayView1::from(xs));
        grads.b1 += &grad_pre.sum_axis(Axis(0));
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn zero_parameters_give_zero() {
        let p = MlpParams::<f64> {
            w1: Array1::zeros(100),
            b1: Array1::zeros(100),
            w2: Array1::zeros(100),
            b2: Array1::zeros(1),
        };
        assert_eq!(p.forward(&[-1.0, 0.0, 3.5]), vec![0.0; 3]);
    }

    #[test]
    fn relu_kills_negative() {
        let p = MlpParams::<f64> {
            w1: arr1(&[1.0]),
            b1: arr1(&[0.0]),
            w2: arr1(&[1.0]),
            b2: arr1(&[0.0]),
        };
        assert_eq!(p.forward(&[-2.0, 3.0]), vec![0.0, 3.0]);
    }

    #[test]
    fn length_mismatch_rejected() {
        let p = MlpParams::<f64> {
            w1: arr1(&[1.0]),
            b1: arr1(&[0.0]),
            w2: arr1(&[1.0]),
            b2: arr1(&[0.0]),
        };
        let mut g = p.clone();
        assert!(p.loss_and_grad(&[1.0, 2.0], &[1.0], &mut g).is_err());
    }
}
