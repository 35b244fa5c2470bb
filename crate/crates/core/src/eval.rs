//! Evaluation metrics: RMSE for continuous responses, AUC for binary labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metric results aggregated over experiment repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub reps: Vec<f64>,
}

impl EvalReport {
    /// Aggregate per-repetition metric values; `std` is the sample standard
    /// deviation (0 for a single repetition).
    pub fn from_reps(metric: &str, reps: Vec<f64>) -> Result<Self> {
        if reps.is_empty() {
            return Err(Error::Input("report needs at least one repetition".into()));
        }
        if reps.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite metric value".into()));
        }
        let n = reps.len();
        let mean = reps.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (reps.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            metric: metric.to_string(),
            mean,
            std,
            n,
            reps,
        })
    }
}

/// Root mean squared error.
pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.is_empty() {
        return Err(Error::Input("rmse of empty vectors is undefined".into()));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape(format!(
            "rmse length mismatch: {} vs {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mse = y_true
        .iter()
        .zip(y_pred)
        .map(|(t, p)| (t - p).powi(2))
        .sum::<f64>()
        / y_true.len() as f64;
    Ok(mse.sqrt())
}

/// Area under the ROC curve via the Mann-Whitney rank statistic; ties get
/// half credit.
pub fn auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::Shape(format!(
            "auc length mismatch: {} vs {}",
            labels.len(),
            scores.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Input(
            "auc needs both classes present".into(),
        ));
    }

    // Average ranks with ties.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share the average rank.
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}
