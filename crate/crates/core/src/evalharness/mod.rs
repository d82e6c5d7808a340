//! MCQ benchmark evaluation: choice extraction, metrics and reports.

mod extract;
mod metrics;
mod report;

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use extract::{extract_choice, Prediction, ABSTAIN};
pub use metrics::{aggregate_overall, compute_metrics, pooled_accuracy, round_half_up, SliceMetrics};
pub use report::{render_table, RunStore};

use crate::backend::{BackendError, ModelBackend};
use crate::corpus::{Benchmark, McqItem, OptionLetter, TaskLabel};
use crate::ids::IdGenerator;
use crate::infer::SamplingParams;
use crate::prompt::render_mcq;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no predictions for slice {}", .0.map_or("overall".to_owned(), |t| t.to_string()))]
    EmptySlice(Option<TaskLabel>),
    #[error("benchmark {0} has no items")]
    EmptyBenchmark(String),
    #[error("invalid sampling parameters: {0}")]
    InvalidSampling(String),
    #[error("unknown run {0}")]
    UnknownRun(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub item_id: String,
    pub task: TaskLabel,
    pub gold: OptionLetter,
    pub predicted: Prediction,
    pub raw_output: String,
    /// Set when the backend failed for this item.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl PredictionRecord {
    pub fn is_correct(&self) -> bool {
        self.predicted == Prediction::Letter(self.gold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_task: BTreeMap<TaskLabel, SliceMetrics>,
    pub overall: SliceMetrics,
    pub abstain_count: usize,
}

impl MetricsReport {
    /// Per-task slices for every task present, plus the pooled overall slice.
    pub fn from_records(records: &[PredictionRecord]) -> Result<Self, EvalError> {
        let mut by_task: BTreeMap<TaskLabel, Vec<PredictionRecord>> = BTreeMap::new();
        for r in records {
            by_task.entry(r.task).or_default().push(r.clone());
        }
        let per_task = by_task
            .iter()
            .map(|(t, recs)| Ok((*t, compute_metrics(recs, None)?)))
            .collect::<Result<_, EvalError>>()?;
        Ok(Self {
            per_task,
            overall: aggregate_overall(&by_task)?,
            abstain_count: records.iter().filter(|r| r.predicted.is_abstain()).count(),
        })
    }
}

/// A completed benchmark run: metadata, report and every prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub run_id: String,
    pub benchmark_id: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_ref: Option<String>,
    pub sampling: SamplingParams,
    pub created_at: DateTime<Utc>,
    pub report: MetricsReport,
    pub predictions: Vec<PredictionRecord>,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub sampling: SamplingParams,
    pub parallelism: usize,
    pub model_ref: Option<String>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            sampling: SamplingParams::default(),
            parallelism: 4,
            model_ref: None,
        }
    }
}

fn predict(item: &McqItem, raw: Result<String, BackendError>) -> PredictionRecord {
    let (predicted, raw_output, note) = match raw {
        Ok(text) => (extract_choice(&text, &item.options), text, None),
        Err(e) => (Prediction::Abstain, String::new(), Some(format!("backend error: {e}"))),
    };
    PredictionRecord {
        item_id: item.id.clone(),
        task: item.task,
        gold: item.gold,
        predicted,
        raw_output,
        note,
    }
}

/// Runs every benchmark item through `backend`. Item `i` is sampled with
/// seed `sampling.seed + i` when a seed is set. Backend failures become
/// `ABSTAIN` records; output order follows the benchmark.
pub fn run_benchmark(
    benchmark: &Benchmark,
    backend: &dyn ModelBackend,
    options: &EvalOptions,
    ids: &IdGenerator,
) -> Result<EvalRun, EvalError> {
    if benchmark.items.is_empty() {
        return Err(EvalError::EmptyBenchmark(benchmark.id.clone()));
    }
    options.sampling.validate().map_err(EvalError::InvalidSampling)?;
    let run_id = ids.next_prefixed("run");
    let created_at = ids.now();
    let workers = options.parallelism.clamp(1, benchmark.items.len());
    let chunk = benchmark.items.len().div_ceil(workers);

    let predictions: Vec<PredictionRecord> = std::thread::scope(|s| {
        let handles: Vec<_> = benchmark
            .items
            .chunks(chunk)
            .enumerate()
            .map(|(c, items)| {
                s.spawn(move || {
                    items
                        .iter()
                        .enumerate()
                        .map(|(j, item)| {
                            let mut sp = options.sampling.clone();
                            sp.seed = sp.seed.map(|base| base.wrapping_add((c * chunk + j) as u64));
                            predict(item, backend.generate(&render_mcq(item), &sp))
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });

    let report = MetricsReport::from_records(&predictions)?;
    tracing::info!(%run_id, accuracy = report.overall.accuracy, abstains = report.abstain_count, "benchmark run finished");
    Ok(EvalRun {
        run_id,
        benchmark_id: benchmark.id.clone(),
        model: backend.identity().to_string(),
        model_ref: options.model_ref.clone(),
        sampling: options.sampling.clone(),
        created_at,
        report,
        predictions,
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MatchRule, ScriptFixture, ScriptedBackend, ScriptedReply};

    fn bench() -> Benchmark {
        let items = (0..4)
            .map(|i| McqItem {
                id: format!("m{i}"),
                task: if i < 2 { TaskLabel::Diagnosis } else { TaskLabel::Treatment },
                stem: format!("Question number {i}?"),
                options: (0..4).map(|k| (OptionLetter::nth(k).unwrap(), format!("choice {i}-{k}"))).collect(),
                gold: OptionLetter::nth(i % 4).unwrap(),
            })
            .collect();
        Benchmark::new("tiny", items).unwrap()
    }

    #[test]
    fn diagnosis_right_treatment_wrong() {
        let b = bench();
        let matches = b
            .items
            .iter()
            .map(|m| {
                let letter = if m.task == TaskLabel::Diagnosis { m.gold } else { OptionLetter::nth((m.gold.index() + 1) % 4).unwrap() };
                MatchRule {
                    contains: m.stem.clone(),
                    reply: ScriptedReply::text(format!("Answer: {letter}")),
                }
            })
            .collect();
        let backend = ScriptedBackend::new(ScriptFixture {
            matches,
            ..ScriptFixture::default()
        });
        let run = run_benchmark(&b, &backend, &EvalOptions::default(), &IdGenerator::seeded(1)).unwrap();
        assert_eq!(run.predictions.iter().map(|p| p.item_id.as_str()).collect::<Vec<_>>(), ["m0", "m1", "m2", "m3"]);
        assert_eq!(run.report.per_task[&TaskLabel::Diagnosis].accuracy, 1.0);
        assert_eq!(run.report.per_task[&TaskLabel::Treatment].accuracy, 0.0);
        assert_eq!(run.report.overall.accuracy, 0.5);
    }

    #[test]
    fn backend_error_becomes_abstain() {
        let b = bench();
        let backend = ScriptedBackend::new(ScriptFixture {
            matches: vec![MatchRule {
                contains: "Question number 1?".into(),
                reply: ScriptedReply::error("timeout"),
            }],
            fallback: Some(ScriptedReply::text("Answer: A")),
            ..ScriptFixture::default()
        });
        let opts = EvalOptions {
            parallelism: 1,
            ..EvalOptions::default()
        };
        let run = run_benchmark(&b, &backend, &opts, &IdGenerator::seeded(1)).unwrap();
        assert_eq!(run.predictions.len(), 4);
        assert!(run.predictions[1].predicted.is_abstain());
        assert!(run.predictions[1].note.is_some());
        assert_eq!(run.report.abstain_count, 1);
    }
}
