//! Checks on generated functions shared by the property and acceptance suites.

use minima_icl::dataset::{sample_minima_spec, SamplingConfig};
use minima_icl::fungen::{evaluate_f, GeneratedFunction, MinimaSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `count` specs with 1 to 8 minima drawn by the dataset sampler.
pub fn random_specs(count: usize, seed: u64) -> Vec<MinimaSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = SamplingConfig::default();
    (0..count)
        .map(|_| {
            let n = rng.random_range(1..=8);
            sample_minima_spec(n, &mut rng, &config).unwrap()
        })
        .collect()
}

pub fn function(spec: &MinimaSpec) -> GeneratedFunction {
    GeneratedFunction::new(spec.clone()).unwrap()
}

/// Largest `|f(x_i) - y_i|`.
pub fn exactness_error(f: &GeneratedFunction) -> f64 {
    f.spec()
        .pairs()
        .map(|(a, y)| (evaluate_f(f, a) - y).abs())
        .fold(0.0, f64::max)
}

/// Local minimality probes `f(x_i +- delta) >= y_i` for every `delta` that
/// lies inside the support (`delta < b * c`). Returns (probes, failures).
pub fn minimality(f: &GeneratedFunction, deltas: &[f64]) -> (usize, usize) {
    let (mut probes, mut failures) = (0, 0);
    for (a, y) in f.spec().pairs() {
        for &d in deltas.iter().filter(|&&d| d < f.support_radius()) {
            for x in [a - d, a + d] {
                probes += 1;
                if evaluate_f(f, x) < y {
                    failures += 1;
                }
            }
        }
    }
    (probes, failures)
}

fn outside_all_supports(f: &GeneratedFunction, x: f64) -> bool {
    f.spec()
        .locations
        .iter()
        .all(|&a| (x - a).abs() > f.support_radius())
}

/// `f <= R` on a dense grid around the minima and `f == R` exactly at grid
/// points outside every support.
pub fn ceiling_holds(f: &GeneratedFunction, points: usize) -> bool {
    let locs = &f.spec().locations;
    let lo = locs.iter().copied().fold(f64::INFINITY, f64::min) - 2.0 * f.support_radius() - 1.0;
    let hi =
        locs.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 2.0 * f.support_radius() + 1.0;
    let r = f.ceiling_r();
    (0..points).all(|i| {
        let x = lo + (hi - lo) * i as f64 / (points - 1) as f64;
        let v = evaluate_f(f, x);
        v <= r && (!outside_all_supports(f, x) || v == r)
    })
}

/// Largest `|f(a +- (b*c - eps)) - R|` over all support boundaries.
pub fn boundary_gap(f: &GeneratedFunction, eps: f64) -> f64 {
    let r = f.ceiling_r();
    let s = f.support_radius();
    f.spec()
        .locations
        .iter()
        .flat_map(|&a| [a - s + eps, a + s - eps])
        .map(|x| (evaluate_f(f, x) - r).abs())
        .fold(0.0, f64::max)
}

/// Largest central-difference slope at the minima.
pub fn center_slope(f: &GeneratedFunction, h: f64) -> f64 {
    f.spec()
        .locations
        .iter()
        .map(|&a| ((evaluate_f(f, a + h) - evaluate_f(f, a - h)) / (2.0 * h)).abs())
        .fold(0.0, f64::max)
}

/// Second differences at interior points of every support, away from the
/// centre and the boundary, against the closed form `2 (y - R) / b^2` of the
/// `beta = 2`, `c = 1` bump. Returns the largest relative deviation.
pub fn second_derivative_error(f: &GeneratedFunction) -> f64 {
    let b = f.scale_b();
    let r = f.ceiling_r();
    let h = 1e-3 * b;
    let mut worst: f64 = 0.0;
    for (a, y) in f.spec().pairs() {
        let exact = 2.0 * (y - r) / (b * b);
        for k in 1..10 {
            let t = k as f64 / 10.0 * b;
            for x in [a - t, a + t] {
                let second = (evaluate_f(f, x + h) - 2.0 * evaluate_f(f, x) + evaluate_f(f, x - h))
                    / (h * h);
                assert!(second.is_finite());
                worst = worst.max((second - exact).abs() / exact.abs());
            }
        }
    }
    worst
}
