//! Small training probes shared by the behaviour and acceptance suites.

use minima_icl::training::{adamw_update, AdamState, TrainConfig};

/// Fit `y = 2x` on 64 points in [-1, 1] with a single linear unit
/// `w x + b` started at zero. Returns the full-batch MSE before each step
/// and after the last one.
pub fn fit_doubling(steps: usize, config: &TrainConfig) -> Vec<f64> {
    let xs: Vec<f64> = (0..64).map(|i| -1.0 + 2.0 * i as f64 / 63.0).collect();
    let n = xs.len() as f64;
    let (mut w, mut b) = (0.0f64, 0.0f64);
    let mut state = AdamState::<f64>::for_lengths(&[1, 1]);
    let mut losses = Vec::with_capacity(steps + 1);
    for step in 1..=steps + 1 {
        let residuals: Vec<f64> = xs.iter().map(|&x| w * x + b - 2.0 * x).collect();
        losses.push(residuals.iter().map(|r| r * r).sum::<f64>() / n);
        if step > steps {
            break;
        }
        let dw = 2.0 * residuals.iter().zip(&xs).map(|(r, x)| r * x).sum::<f64>() / n;
        let db = 2.0 * residuals.iter().sum::<f64>() / n;
        let (mut pw, mut pb) = ([w], [b]);
        adamw_update(
            &mut [&mut pw[..], &mut pb[..]],
            &[&[dw][..], &[db][..]],
            &["w", "b"],
            &mut state,
            config,
            step as u64,
        )
        .unwrap();
        (w, b) = (pw[0], pb[0]);
    }
    losses
}

/// Learning rate of the linear probe; the training default of 1e-4 moves a
/// weight by at most about 0.2 in 2000 steps, too little to reach 2.
pub const PROBE_LEARNING_RATE: f64 = 1e-2;
