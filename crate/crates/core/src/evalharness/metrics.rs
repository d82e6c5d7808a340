use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{EvalError, Prediction, PredictionRecord};
use crate::corpus::{OptionLetter, TaskLabel};

/// Accuracy plus macro precision/recall/F1 for one slice of predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n: usize,
    pub correct: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Metrics over `records`, restricted to `slice` when given.
///
/// Precision, recall and F1 are macro-averaged over the option letters that
/// occur as gold in the slice; undefined ratios count as 0. `ABSTAIN` is
/// always wrong.
pub fn compute_metrics(records: &[PredictionRecord], slice: Option<TaskLabel>) -> Result<SliceMetrics, EvalError> {
    let chosen: Vec<&PredictionRecord> = records
        .iter()
        .filter(|r| slice.is_none_or(|t| r.task == t))
        .collect();
    if chosen.is_empty() {
        return Err(EvalError::EmptySlice(slice));
    }
    let n = chosen.len();
    let correct = chosen.iter().filter(|r| r.is_correct()).count();
    let classes: BTreeSet<OptionLetter> = chosen.iter().map(|r| r.gold).collect();

    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for c in &classes {
        let tp = chosen.iter().filter(|r| r.gold == *c && r.predicted == Prediction::Letter(*c)).count();
        let predicted_c = chosen.iter().filter(|r| r.predicted == Prediction::Letter(*c)).count();
        let gold_c = chosen.iter().filter(|r| r.gold == *c).count();
        let p = ratio(tp, predicted_c);
        let r = ratio(tp, gold_c);
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        p_sum += p;
        r_sum += r;
        f_sum += f;
    }
    let k = classes.len() as f64;
    Ok(SliceMetrics {
        accuracy: ratio(correct, n),
        precision: p_sum / k,
        recall: r_sum / k,
        f1: f_sum / k,
        n,
        correct,
    })
}

/// Overall metrics from pooled per-task records (micro over items).
pub fn aggregate_overall(per_task: &BTreeMap<TaskLabel, Vec<PredictionRecord>>) -> Result<SliceMetrics, EvalError> {
    let pooled: Vec<PredictionRecord> = per_task.values().flatten().cloned().collect();
    compute_metrics(&pooled, None)
}

/// Pooled accuracy from slice counts alone.
pub fn pooled_accuracy<'a>(slices: impl IntoIterator<Item = &'a SliceMetrics>) -> f64 {
    let (c, n) = slices
        .into_iter()
        .fold((0, 0), |(c, n), s| (c + s.correct, n + s.n));
    ratio(c, n)
}

/// Half-up rounding to `places` decimals, robust to binary representation
/// error (0.5875 → 0.588 at 3 places).
pub fn round_half_up(x: f64, places: u32) -> f64 {
    let scale = 10f64.powi(places as i32);
    let scaled = x * scale;
    (scaled + 0.5 + 1e-9 * scaled.abs().max(1.0)).floor() / scale
}
