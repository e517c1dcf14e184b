//! Held-out scoring, the ε-learnability criterion and result tables.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Prompt, PromptDataset};
use crate::models::{ModelError, ModelPreset, ParameterSet, Real};
use crate::training::MetricsRow;

pub const TABLE_MINIMA: [usize; 4] = [1, 2, 3, 4];
pub const TABLE_SHOTS: [usize; 3] = [8, 16, 32];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("duplicate report for model {model}, minima {minima}, shots {shots}, seed {seed}")]
    DuplicateCell {
        model: String,
        minima: usize,
        shots: usize,
        seed: u64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Anything that maps a prompt to one prediction per `x`.
pub trait Predictor {
    fn predict_prompt(&self, prompt: &Prompt) -> Result<Vec<f64>, ModelError>;
}

impl<T: Real> Predictor for ParameterSet<T> {
    fn predict_prompt(&self, prompt: &Prompt) -> Result<Vec<f64>, ModelError> {
        let cast = |v: &[f64]| v.iter().map(|&x| T::from_f64_lossy(x)).collect::<Vec<T>>();
        let preds = match self {
            ParameterSet::Transformer(p) => p.predict(&cast(&prompt.xs), &cast(&prompt.ys))?,
            ParameterSet::Mlp2(p) => p.forward(&cast(&prompt.xs)),
        };
        Ok(preds.into_iter().map(|v| v.to_f64().unwrap()).collect())
    }
}

/// Returns the true labels.
#[derive(Debug, Clone, Copy)]
pub struct LabelOracle;

impl Predictor for LabelOracle {
    fn predict_prompt(&self, prompt: &Prompt) -> Result<Vec<f64>, ModelError> {
        Ok(prompt.ys.clone())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantPredictor(pub f64);

impl Predictor for ConstantPredictor {
    fn predict_prompt(&self, prompt: &Prompt) -> Result<Vec<f64>, ModelError> {
        Ok(vec![self.0; prompt.len()])
    }
}

/// Mean squared error over every prediction position of every prompt.
pub fn evaluate_predictor(
    predictor: &impl Predictor,
    dataset: &PromptDataset,
) -> Result<f64, ModelError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for prompt in &dataset.prompts {
        let preds = predictor.predict_prompt(prompt)?;
        if preds.len() != prompt.ys.len() {
            return Err(ModelError::LengthMismatch {
                predictions: preds.len(),
                targets: prompt.ys.len(),
            });
        }
        total += preds
            .iter()
            .zip(&prompt.ys)
            .map(|(p, y)| (p - y) * (p - y))
            .sum::<f64>();
        count += preds.len();
    }
    if count == 0 {
        return Err(ModelError::EmptySequence);
    }
    Ok(total / count as f64)
}

/// Evaluation MSE of a model; parameters are only read.
pub fn evaluate_model<T: Real>(
    params: &ParameterSet<T>,
    dataset: &PromptDataset,
) -> Result<f64, ModelError> {
    evaluate_predictor(params, dataset)
}

/// Inclusive ε criterion: `eval_mse <= epsilon`.
pub fn epsilon_check(eval_mse: f64, epsilon: f64) -> bool {
    debug_assert!(epsilon > 0.0, "epsilon must be positive");
    eval_mse <= epsilon
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_name: String,
    pub num_minima: usize,
    pub num_shots: usize,
    /// Evaluation MSE after the final epoch.
    pub eval_mse: f64,
    /// Mean training MSE across all epochs, for comparison with curve legends.
    pub train_mse_epoch_mean: Option<f64>,
    pub epsilon: Option<f64>,
    pub learned: Option<bool>,
    pub seed: u64,
}

impl EvalReport {
    pub fn new(
        model_name: impl Into<String>,
        num_minima: usize,
        num_shots: usize,
        eval_mse: f64,
        seed: u64,
    ) -> Self {
        Self {
            model_name: model_name.into(),
            num_minima,
            num_shots,
            eval_mse,
            train_mse_epoch_mean: None,
            epsilon: None,
            learned: None,
            seed,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = Some(epsilon);
        self.learned = Some(epsilon_check(self.eval_mse, epsilon));
        self
    }
}

pub fn across_epoch_mean(metrics: &[MetricsRow]) -> Option<f64> {
    if metrics.is_empty() {
        return None;
    }
    Some(metrics.iter().map(|r| r.train_mse).sum::<f64>() / metrics.len() as f64)
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2.0
    })
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // ties share the average rank
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` for fewer than two points or a
/// constant input.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

/// Spearman correlation between the number of minima and the mean eval MSE
/// at that number of minima, for one model.
pub fn minima_trend(reports: &[EvalReport], model_name: &str) -> Option<f64> {
    let mut by_minima: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in reports.iter().filter(|r| r.model_name == model_name) {
        by_minima.entry(r.num_minima).or_default().push(r.eval_mse);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = by_minima
        .iter()
        .map(|(&m, v)| (m as f64, v.iter().sum::<f64>() / v.len() as f64))
        .unzip();
    spearman(&xs, &ys)
}

/// Models as rows; `(minima, shots)` pairs as columns, grouped by minima.
/// Each cell is the median over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub models: Vec<String>,
    pub columns: Vec<(usize, usize)>,
    /// `cells[row][col]`, `None` where no report exists.
    pub cells: Vec<Vec<Option<f64>>>,
}

fn model_order(name: &str) -> (usize, String) {
    let rank = name
        .parse::<ModelPreset>()
        .map(|p| ModelPreset::ALL.iter().position(|&q| q == p).unwrap())
        .unwrap_or(ModelPreset::ALL.len());
    (rank, name.to_string())
}

pub fn build_results_table(reports: &[EvalReport]) -> Result<ResultsTable, EvalError> {
    let mut seen = HashSet::new();
    let mut grouped: BTreeMap<(String, usize, usize), Vec<f64>> = BTreeMap::new();
    for r in reports {
        if !seen.insert((r.model_name.clone(), r.num_minima, r.num_shots, r.seed)) {
            return Err(EvalError::DuplicateCell {
                model: r.model_name.clone(),
                minima: r.num_minima,
                shots: r.num_shots,
                seed: r.seed,
            });
        }
        grouped
            .entry((r.model_name.clone(), r.num_minima, r.num_shots))
            .or_default()
            .push(r.eval_mse);
    }

    let mut models: Vec<String> = reports
        .iter()
        .map(|r| r.model_name.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    models.sort_by_key(|m| model_order(m));
    let minima: BTreeSet<usize> = TABLE_MINIMA
        .into_iter()
        .chain(reports.iter().map(|r| r.num_minima))
        .collect();
    let shots: BTreeSet<usize> = TABLE_SHOTS
        .into_iter()
        .chain(reports.iter().map(|r| r.num_shots))
        .collect();
    let columns: Vec<(usize, usize)> = minima
        .iter()
        .flat_map(|&m| shots.iter().map(move |&s| (m, s)))
        .collect();

    let cells = models
        .iter()
        .map(|model| {
            columns
                .iter()
                .map(|&(m, s)| {
                    grouped
                        .get_mut(&(model.clone(), m, s))
                        .and_then(|v| median(v))
                })
                .collect()
        })
        .collect();
    Ok(ResultsTable {
        models,
        columns,
        cells,
    })
}

const MISSING: &str = "-";

impl ResultsTable {
    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn cell(&self, model: &str, minima: usize, shots: usize) -> Option<f64> {
        let row = self.models.iter().position(|m| m == model)?;
        let col = self.columns.iter().position(|&c| c == (minima, shots))?;
        self.cells[row][col]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model");
        for (m, s) in &self.columns {
            write!(out, ",minima{m}_shots{s}").unwrap();
        }
        out.push('\n');
        for (model, row) in self.models.iter().zip(&self.cells) {
            out.push_str(model);
            for cell in row {
                match cell {
                    Some(v) => write!(out, ",{v}").unwrap(),
                    None => write!(out, ",{MISSING}").unwrap(),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Fixed-width rendering with a minima header line above the shots line.
    pub fn to_text(&self) -> String {
        const W: usize = 8;
        let name_w = self
            .models
            .iter()
            .map(String::len)
            .chain([5])
            .max()
            .unwrap();
        let mut minima_line = format!("{:name_w$}", "");
        let mut shots_line = format!("{:name_w$}", "Model");
        let mut last = None;
        for &(m, s) in &self.columns {
            let label = if last != Some(m) {
                format!("M={m}")
            } else {
                String::new()
            };
            last = Some(m);
            write!(minima_line, " {label:>W$}").unwrap();
            write!(shots_line, " {:>W$}", format!("S={s}")).unwrap();
        }
        let mut out = format!("{}\n{}\n", minima_line.trim_end(), shots_line);
        for (model, row) in self.models.iter().zip(&self.cells) {
            let mut line = format!("{model:name_w$}");
            for cell in row {
                let text = cell.map_or(MISSING.to_string(), |v| format!("{v:.4}"));
                write!(line, " {text:>W$}").unwrap();
            }
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

pub fn write_reports_csv(path: &std::path::Path, reports: &[EvalReport]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_reports_csv(path: &std::path::Path) -> Result<Vec<EvalReport>, EvalError> {
    Ok(csv::Reader::from_path(path)?
        .deserialize()
        .collect::<Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_dataset, SamplingConfig, Split};

    fn report(model: &str, minima: usize, shots: usize, seed: u64, mse: f64) -> EvalReport {
        EvalReport::new(model, minima, shots, mse, seed)
    }

    #[test]
    fn epsilon_examples() {
        assert!(epsilon_check(0.01, 0.05));
        assert!(epsilon_check(0.05, 0.05));
        assert!(!epsilon_check(0.06, 0.05));
        let r = report("pico", 1, 8, 0, 0.02).with_epsilon(0.05);
        assert_eq!(r.learned, Some(true));
    }

    #[test]
    fn oracle_scores_zero() {
        let ds = build_dataset(
            &SamplingConfig {
                num_minima: 2,
                num_shots: 3,
                pairs_per_prompt: 50,
                ..SamplingConfig::default()
            },
            Split::Eval,
        )
        .unwrap();
        assert_eq!(evaluate_predictor(&LabelOracle, &ds).unwrap(), 0.0);
    }

    #[test]
    fn full_grid_shape() {
        let mut reports = Vec::new();
        for model in ["mlp2", "small"] {
            for m in TABLE_MINIMA {
                for s in TABLE_SHOTS {
                    reports.push(report(model, m, s, 0, (m * s) as f64));
                }
            }
        }
        let table = build_results_table(&reports).unwrap();
        assert_eq!(table.models, vec!["small", "mlp2"]);
        assert_eq!(table.columns.len(), 12);
        assert!(table.cells.iter().all(|r| r.iter().all(Option::is_some)));
        assert_eq!(table.cell("small", 3, 16), Some(48.0));
        let csv = table.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 13);
    }

    #[test]
    fn standard_row_layout() {
        // minima 1 row of the Standard table: shots 8, 16, 32 left to right
        let values = [0.0038, 0.0006, 0.0002];
        let reports: Vec<_> = TABLE_SHOTS
            .iter()
            .zip(values)
            .map(|(&s, v)| report("standard", 1, s, 0, v))
            .collect();
        let table = build_results_table(&reports).unwrap();
        let text = table.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].trim_start().starts_with("M=1"));
        assert!(lines[1].starts_with("Model"));
        assert!(lines[2].starts_with("standard   0.0038   0.0006   0.0002"));
        assert!(lines[2].ends_with('-'));
    }

    #[test]
    fn empty_and_duplicates() {
        let table = build_results_table(&[]).unwrap();
        assert!(table.is_empty());
        let dup = [report("pico", 1, 8, 0, 1.0), report("pico", 1, 8, 0, 2.0)];
        assert!(matches!(
            build_results_table(&dup),
            Err(EvalError::DuplicateCell { .. })
        ));
    }

    #[test]
    fn seed_median_and_missing() {
        let reports = [
            report("pico", 1, 8, 0, 3.0),
            report("pico", 1, 8, 1, 1.0),
            report("pico", 1, 8, 2, 2.0),
        ];
        let table = build_results_table(&reports).unwrap();
        assert_eq!(table.cell("pico", 1, 8), Some(2.0));
        assert_eq!(table.cell("pico", 2, 8), None);
        assert!(table.to_csv().contains(",-"));
    }

    #[test]
    fn spearman_cases() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 5.0, 9.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0], &[1.0, 1.0]), None);
        let rho = spearman(&[1.0, 2.0, 3.0, 4.0], &[0.1, 0.3, 0.2, 0.4]).unwrap();
        assert!((rho - 0.8).abs() < 1e-12);
        let reports = [
            report("pico", 1, 8, 0, 0.01),
            report("pico", 2, 8, 0, 0.05),
            report("pico", 3, 8, 0, 0.2),
        ];
        assert_eq!(minima_trend(&reports, "pico"), Some(1.0));
    }

    #[test]
    fn reports_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reports.csv");
        let reports = vec![
            report("pico", 1, 8, 0, 0.125).with_epsilon(0.5),
            report("mlp2", 2, 16, 1, 0.75),
        ];
        write_reports_csv(&path, &reports).unwrap();
        assert_eq!(read_reports_csv(&path).unwrap(), reports);
    }
}
