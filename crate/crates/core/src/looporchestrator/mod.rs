//! Expert-in-the-loop cycles: inference batch, review queue, verdicts, merge.

mod expert;
mod orchestrator;

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use expert::{ExpertScript, ScriptedExpert};
pub use orchestrator::{OpenCycleRequest, Orchestrator};

use crate::corpus::{CorpusError, TaskLabel};
use crate::infer::{InferError, InferenceResult};

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("no queries supplied")]
    EmptyQueries,
    #[error("quota for {task} needs {requested} queries but only {available} route there")]
    QuotaUnsatisfiable {
        task: TaskLabel,
        requested: usize,
        available: usize,
    },
    #[error("unknown cycle {0}")]
    UnknownCycle(String),
    #[error("unknown review item {0}")]
    UnknownReview(String),
    #[error("review item {review_id} is claimed by {claimed_by}")]
    ClaimConflict { review_id: String, claimed_by: String },
    #[error("review item {review_id} is at version {actual}, expected {expected}")]
    VersionConflict {
        review_id: String,
        expected: u64,
        actual: u64,
    },
    #[error("review item {0} is already decided")]
    AlreadyDecided(String),
    #[error("invalid verdict: {0}")]
    Validation(String),
    #[error("cycle {cycle_id} has {} undecided items", pending.len())]
    PendingItems { cycle_id: String, pending: Vec<String> },
    #[error("cycle {0} is already merged")]
    AlreadyMerged(String),
    #[error("cycle {0} is not merged")]
    NotMerged(String),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    Pending,
    Claimed,
    Decided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Approve,
    Edit,
    Reject,
}

/// Likert ratings, each 1..=5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratings {
    pub accuracy: u8,
    pub appropriateness: u8,
    pub empathy: u8,
}

impl Ratings {
    pub fn new(accuracy: u8, appropriateness: u8, empathy: u8) -> Self {
        Self {
            accuracy,
            appropriateness,
            empathy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewVerdict {
    pub review_id: String,
    pub reviewer: String,
    pub ratings: Ratings,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_answer: Option<String>,
    /// Retrying a submission with the same key returns the original outcome.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
}

impl ReviewVerdict {
    /// Checks the verdict against the answer under review.
    pub fn validate(&self, original_answer: &str) -> Result<(), String> {
        if self.reviewer.trim().is_empty() {
            return Err("reviewer is empty".into());
        }
        let r = self.ratings;
        for (axis, v) in [
            ("accuracy", r.accuracy),
            ("appropriateness", r.appropriateness),
            ("empathy", r.empathy),
        ] {
            if !(1..=5).contains(&v) {
                return Err(format!("{axis} rating {v} is outside 1..=5"));
            }
        }
        match (self.decision, self.edited_answer.as_deref()) {
            (Decision::Edit, None) => Err("edit requires edited_answer".into()),
            (Decision::Edit, Some(e)) if e.trim().is_empty() => Err("edited_answer is empty".into()),
            (Decision::Edit, Some(e)) if e.trim() == original_answer.trim() => {
                Err("edited_answer is identical to the original answer".into())
            }
            (Decision::Edit, Some(_)) => Ok(()),
            (d, Some(_)) => Err(format!("edited_answer is only allowed with edit, not {d:?}").to_lowercase()),
            (_, None) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub review_id: String,
    pub cycle_id: String,
    pub inference: InferenceResult,
    pub status: ReviewStatus,
    #[serde(default)]
    pub claimed_by: Option<String>,
    #[serde(default)]
    pub decided_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub verdict: Option<ReviewVerdict>,
    /// Bumped on every change; callers may pass it back for optimistic checks.
    pub version: u64,
}

impl ReviewItem {
    /// The answer that would be merged, if any.
    pub fn validated_answer(&self) -> Option<&str> {
        let v = self.verdict.as_ref()?;
        match v.decision {
            Decision::Approve => Some(&self.inference.response),
            Decision::Edit => v.edited_answer.as_deref(),
            Decision::Reject => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictCounts {
    pub approve: usize,
    pub edit: usize,
    pub reject: usize,
}

impl VerdictCounts {
    pub fn add(&mut self, d: Decision) {
        match d {
            Decision::Approve => self.approve += 1,
            Decision::Edit => self.edit += 1,
            Decision::Reject => self.reject += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.approve + self.edit + self.reject
    }

    pub fn merged(&self) -> usize {
        self.approve + self.edit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleStatus {
    Open,
    Merged,
    Trained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle_id: String,
    pub input_dataset: u64,
    pub inference_count: usize,
    pub verdicts: VerdictCounts,
    pub output_dataset: Option<u64>,
    pub status: CycleStatus,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub artifact_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanRatings {
    pub accuracy: f64,
    pub appropriateness: f64,
    pub empathy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub cycle_id: String,
    pub status: CycleStatus,
    pub input_dataset: u64,
    pub output_dataset: Option<u64>,
    pub inference_count: usize,
    pub pending: usize,
    pub verdicts: VerdictCounts,
    pub by_task: BTreeMap<TaskLabel, VerdictCounts>,
    /// Absent until at least one verdict exists.
    pub mean_ratings: Option<MeanRatings>,
    pub merged_count: usize,
    pub input_size: usize,
    pub output_size: Option<usize>,
    /// `output_size - input_size` once merged.
    pub dataset_delta: Option<usize>,
    #[serde(default)]
    pub artifact_id: Option<String>,
}
