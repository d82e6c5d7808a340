use serde::{Deserialize, Serialize};

use super::{Decision, Ratings, ReviewItem, ReviewVerdict};

/// One scripted decision. Edits without `edited_answer` append a fixed
/// clarification to the model's answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertScript {
    pub decision: Decision,
    #[serde(default = "default_ratings")]
    pub ratings: Ratings,
    #[serde(default)]
    pub edited_answer: Option<String>,
}

fn default_ratings() -> Ratings {
    Ratings::new(5, 5, 4)
}

const EDIT_NOTE: &str = "Please confirm with a dermatologist before starting treatment.";

/// Deterministic stand-in for a specialist: the `n`-th item reviewed gets the
/// `n`-th scripted decision (cycling when the script is shorter).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptedExpert {
    pub reviewer: String,
    pub script: Vec<ExpertScript>,
}

impl ScriptedExpert {
    pub fn new(reviewer: impl Into<String>, script: Vec<ExpertScript>) -> Self {
        assert!(!script.is_empty(), "expert script must not be empty");
        Self {
            reviewer: reviewer.into(),
            script,
        }
    }

    /// Script from a decision sequence with default ratings.
    pub fn from_decisions(reviewer: impl Into<String>, decisions: &[Decision]) -> Self {
        Self::new(
            reviewer,
            decisions
                .iter()
                .map(|d| ExpertScript {
                    decision: *d,
                    ratings: default_ratings(),
                    edited_answer: None,
                })
                .collect(),
        )
    }

    pub fn verdict(&self, n: usize, item: &ReviewItem) -> ReviewVerdict {
        let step = &self.script[n % self.script.len()];
        let edited_answer = match step.decision {
            Decision::Edit => Some(
                step.edited_answer
                    .clone()
                    .unwrap_or_else(|| format!("{} {EDIT_NOTE}", item.inference.response.trim())),
            ),
            _ => None,
        };
        ReviewVerdict {
            review_id: item.review_id.clone(),
            reviewer: self.reviewer.clone(),
            ratings: step.ratings,
            decision: step.decision,
            edited_answer,
            idempotency_key: Some(format!("{}:{}", self.reviewer, item.review_id)),
        }
    }
}
