//! Times one forward/backward pass per preset at a few prompt lengths.
//!
//! `cargo run --release --example throughput`

use std::time::Instant;

use minima_icl::models::{reset_parameters, ModelPreset, ParameterSet};
use minima_icl::training::{adamw_step, AdamState, TrainConfig};

fn main() {
    let cases = [
        (ModelPreset::Pico, 512),
        (ModelPreset::Tiny, 512),
        (ModelPreset::Small, 64),
        (ModelPreset::Small, 128),
        (ModelPreset::Standard, 16),
        (ModelPreset::Standard, 32),
        (ModelPreset::Standard, 64),
    ];
    for (preset, pairs) in cases {
        let cfg = preset.config(2 * pairs);
        let params = reset_parameters::<f32>(&cfg, 0).unwrap();
        let mut grads = params.zeros_like();
        let xs: Vec<f32> = (0..pairs).map(|i| (i as f32 * 0.7).sin()).collect();
        let ys: Vec<f32> = xs.iter().map(|x| x * x).collect();
        let (ParameterSet::Transformer(p), ParameterSet::Transformer(g)) = (&params, &mut grads)
        else {
            unreachable!()
        };
        let reps = 5;
        let start = Instant::now();
        for _ in 0..reps {
            p.loss_and_grad(&xs, &ys, g).unwrap();
        }
        let per = start.elapsed().as_secs_f64() / reps as f64;
        let cfg_train = TrainConfig::default();
        let mut params = params.clone();
        let mut state = AdamState::new(&params);
        let start = Instant::now();
        for step in 1..=reps {
            adamw_step(&mut params, &grads, &mut state, &cfg_train, step as u64).unwrap();
        }
        let opt = start.elapsed().as_secs_f64() / reps as f64;
        println!(
            "{preset:>8} pairs={pairs:>4}: {:>8.2} ms fwd+bwd, {:>7.2} ms AdamW step",
            per * 1e3,
            opt * 1e3
        );
    }
}
