//! Functions with prescribed local minima.
//!
//! A generated function is a ceiling `R` minus a weighted sum of compactly
//! supported bumps, one bump per prescribed minimum:
//!
//! ```text
//! f(x) = R + sum_i (y_i - R) * h(x; c, beta, x_i, b)
//! h(x; c, beta, a, b) = (c - min(|x - a| / b, c))^beta
//! b = min_{i != j} |x_i - x_j| / 2        (1.0 for a single minimum)
//! R = max_i y_i + C
//! ```
//!
//! With `b` at half the smallest gap the supports never overlap, so with
//! `c = 1` each `x_i` is attained exactly as a local minimum and `f = R`
//! everywhere outside the supports.

use ndarray::{Array1, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Specs whose closest pair of locations is nearer than this are rejected.
pub const MIN_LOCATION_GAP: f64 = 1e-6;

pub const DEFAULT_SUPPORT: f64 = 1.0;
pub const DEFAULT_BETA: f64 = 2.0;
pub const DEFAULT_CEILING_MARGIN: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FunctionError {
    #[error("invalid bump shape: c = {c} must be > 0 and beta = {beta} must be >= 1")]
    InvalidShape { c: f64, beta: f64 },
    #[error("scale b = {0} must be positive and finite")]
    InvalidScale(f64),
    #[error("ceiling margin {0} must be positive and finite")]
    InvalidMargin(f64),
    #[error("a minima spec needs at least one (location, value) pair")]
    Empty,
    #[error("{locations} locations but {values} values")]
    LengthMismatch { locations: usize, values: usize },
    #[error("minimum gap between locations is {gap:e}, below the allowed {min:e}")]
    DuplicateLocations { gap: f64, min: f64 },
    #[error("non-finite value in minima spec")]
    NonFinite,
}

/// The prescribed minima plus the bump shape parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimaSpec {
    pub locations: Vec<f64>,
    pub values: Vec<f64>,
    /// Initial support half-width of the base bump.
    pub c: f64,
    /// Differentiability exponent.
    pub beta: f64,
    /// Gap between the largest prescribed value and the ceiling.
    pub ceiling_margin: f64,
}

impl MinimaSpec {
    /// Spec with the default shape (`c = 1`, `beta = 2`, `C = 1`).
    pub fn new(locations: Vec<f64>, values: Vec<f64>) -> Result<Self, FunctionError> {
        Self::with_shape(
            locations,
            values,
            DEFAULT_SUPPORT,
            DEFAULT_BETA,
            DEFAULT_CEILING_MARGIN,
        )
    }

    pub fn with_shape(
        locations: Vec<f64>,
        values: Vec<f64>,
        c: f64,
        beta: f64,
        ceiling_margin: f64,
    ) -> Result<Self, FunctionError> {
        let spec = Self {
            locations,
            values,
            c,
            beta,
            ceiling_margin,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self, FunctionError> {
        let (locations, values) = pairs.iter().copied().unzip();
        Self::new(locations, values)
    }

    pub fn num_minima(&self) -> usize {
        self.locations.len()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.locations
            .iter()
            .copied()
            .zip(self.values.iter().copied())
    }

    pub fn validate(&self) -> Result<(), FunctionError> {
        check_shape(self.c, self.beta)?;
        if !(self.ceiling_margin > 0.0 && self.ceiling_margin.is_finite()) {
            return Err(FunctionError::InvalidMargin(self.ceiling_margin));
        }
        if self.locations.len() != self.values.len() {
            return Err(FunctionError::LengthMismatch {
                locations: self.locations.len(),
                values: self.values.len(),
            });
        }
        if self.locations.is_empty() {
            return Err(FunctionError::Empty);
        }
        if self
            .locations
            .iter()
            .chain(&self.values)
            .any(|v| !v.is_finite())
        {
            return Err(FunctionError::NonFinite);
        }
        compute_scale_b(&self.locations).map(|_| ())
    }
}

fn check_shape(c: f64, beta: f64) -> Result<(), FunctionError> {
    // NaN fails both comparisons
    if !(c > 0.0 && c.is_finite() && beta >= 1.0 && beta.is_finite()) {
        return Err(FunctionError::InvalidShape { c, beta });
    }
    Ok(())
}

/// Clamped bump on a non-negative scaled distance. Shared by the scalar and
/// broadcast paths so both round identically.
#[inline]
fn bump(t: f64, c: f64, beta: f64) -> f64 {
    (c - t.min(c)).powf(beta)
}

/// Base bump: `(c - x)^beta` on `[-c, c]`, zero elsewhere.
pub fn g_base(x: f64, c: f64, beta: f64) -> Result<f64, FunctionError> {
    check_shape(c, beta)?;
    if (-c..=c).contains(&x) {
        Ok((c - x).powf(beta))
    } else {
        Ok(0.0)
    }
}

/// Base bump centred at `a` and stretched by `b`; support `[a - b*c, a + b*c]`.
pub fn h_located(x: f64, c: f64, beta: f64, a: f64, b: f64) -> Result<f64, FunctionError> {
    check_shape(c, beta)?;
    if !(b > 0.0 && b.is_finite()) {
        return Err(FunctionError::InvalidScale(b));
    }
    Ok(bump(((x - a) / b).abs(), c, beta))
}

/// Half the smallest pairwise distance between locations; 1.0 for a single
/// location.
pub fn compute_scale_b(locations: &[f64]) -> Result<f64, FunctionError> {
    match locations.len() {
        0 => Err(FunctionError::Empty),
        1 => Ok(1.0),
        _ => {
            let mut sorted = locations.to_vec();
            sorted.sort_by(f64::total_cmp);
            let gap = sorted
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(f64::INFINITY, f64::min);
            if gap.is_nan() || gap < MIN_LOCATION_GAP {
                return Err(FunctionError::DuplicateLocations {
                    gap,
                    min: MIN_LOCATION_GAP,
                });
            }
            Ok(gap / 2.0)
        }
    }
}

pub fn compute_ceiling_r(values: &[f64], ceiling_margin: f64) -> Result<f64, FunctionError> {
    if !(ceiling_margin > 0.0 && ceiling_margin.is_finite()) {
        return Err(FunctionError::InvalidMargin(ceiling_margin));
    }
    values
        .iter()
        .copied()
        .reduce(f64::max)
        .map(|m| m + ceiling_margin)
        .ok_or(FunctionError::Empty)
}

/// A minima spec together with its derived scale and ceiling.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedFunction {
    spec: MinimaSpec,
    scale_b: f64,
    ceiling_r: f64,
}

impl GeneratedFunction {
    pub fn new(spec: MinimaSpec) -> Result<Self, FunctionError> {
        spec.validate()?;
        let scale_b = compute_scale_b(&spec.locations)?;
        let ceiling_r = compute_ceiling_r(&spec.values, spec.ceiling_margin)?;
        Ok(Self {
            spec,
            scale_b,
            ceiling_r,
        })
    }

    pub fn spec(&self) -> &MinimaSpec {
        &self.spec
    }

    pub fn scale_b(&self) -> f64 {
        self.scale_b
    }

    pub fn ceiling_r(&self) -> f64 {
        self.ceiling_r
    }

    /// Half-width `b * c` of every support interval.
    pub fn support_radius(&self) -> f64 {
        self.scale_b * self.spec.c
    }

    pub fn eval(&self, x: f64) -> f64 {
        evaluate_f(self, x)
    }

    /// Broadcast evaluation: distances of every point to every centre form a
    /// `points x minima` matrix, the bump is applied elementwise and the
    /// weighted sum is a matrix-vector product.
    pub fn eval_batch(&self, points: &[f64]) -> Vec<f64> {
        let MinimaSpec { c, beta, .. } = self.spec;
        let centers = ArrayView1::from(&self.spec.locations[..]);
        let weights = Array1::from(self.spec.values.clone()) - self.ceiling_r;
        let column = ArrayView1::from(points).insert_axis(Axis(1));
        let distances = &column - &centers.insert_axis(Axis(0));
        let bumps = distances.mapv_into(|d| bump((d / self.scale_b).abs(), c, beta));
        (bumps.dot(&weights) + self.ceiling_r).to_vec()
    }
}

/// Pointwise evaluation by an explicit loop over the minima.
pub fn evaluate_f(function: &GeneratedFunction, x: f64) -> f64 {
    let MinimaSpec { c, beta, .. } = function.spec;
    let r = function.ceiling_r;
    let b = function.scale_b;
    function.spec.pairs().fold(r, |acc, (a, y)| {
        acc + (y - r) * bump(((x - a) / b).abs(), c, beta)
    })
}

/// Vectorised generator over `(location, value)` pairs with the default
/// shape (`c = 1`, `beta = 2`, ceiling margin 1).
pub fn evaluate_f_batch(
    minima_pairs: &[(f64, f64)],
    points: &[f64],
) -> Result<Vec<f64>, FunctionError> {
    let function = GeneratedFunction::new(MinimaSpec::from_pairs(minima_pairs)?)?;
    Ok(function.eval_batch(points))
}
