//! Query routing and single-turn response generation.

mod router;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use router::{KeywordRuleset, Route, RulesetError};

use crate::backend::{BackendError, ModelBackend};
use crate::corpus::TaskLabel;
use crate::ids::IdGenerator;
use crate::prompt::render_qa;

/// Banner attached to every generated response.
pub const DISCLAIMER: &str =
    "This response is informational and does not replace an assessment by a qualified clinician.";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            top_p: 0.9,
            max_tokens: 512,
            seed: None,
        }
    }
}

impl SamplingParams {
    /// Greedy decoding: temperature 0, full nucleus.
    pub fn greedy() -> Self {
        Self {
            temperature: 0.0,
            top_p: 1.0,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(format!("temperature {} must be non-negative", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(format!("top_p {} must be in (0, 1]", self.top_p));
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub query: String,
    pub task_pred: TaskLabel,
    pub response: String,
    pub model_ref: String,
    pub sampling: SamplingParams,
    pub trace_id: String,
    pub disclaimer: String,
}

#[derive(Debug, Error)]
pub enum InferError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("invalid sampling parameters: {0}")]
    InvalidSampling(String),
    #[error("backend error (trace {trace_id}): {source}")]
    Backend {
        trace_id: String,
        #[source]
        source: BackendError,
    },
}

/// Routes a non-empty query to a task label with the given ruleset.
pub fn route_task(rules: &KeywordRuleset, query: &str) -> Result<(TaskLabel, f64), InferError> {
    if query.trim().is_empty() {
        return Err(InferError::EmptyQuery);
    }
    let route = rules.route(query);
    Ok((route.task, route.confidence))
}

/// Renders the shared QA template for `(query, task)` and asks the backend.
/// `model_ref` names what answered (an adapter id or base model); when absent
/// the backend's model identifier is recorded.
pub fn generate(
    query: &str,
    task: TaskLabel,
    backend: &dyn ModelBackend,
    sampling: SamplingParams,
    model_ref: Option<&str>,
    ids: &IdGenerator,
) -> Result<InferenceResult, InferError> {
    if query.trim().is_empty() {
        return Err(InferError::EmptyQuery);
    }
    sampling.validate().map_err(InferError::InvalidSampling)?;
    let trace_id = ids.next_prefixed("trace");
    let prompt = render_qa(query, task);
    let response = backend
        .generate(&prompt, &sampling)
        .map_err(|source| InferError::Backend {
            trace_id: trace_id.clone(),
            source,
        })?;
    tracing::debug!(%trace_id, %task, "generated response");
    Ok(InferenceResult {
        query: query.to_owned(),
        task_pred: task,
        response,
        model_ref: model_ref.map_or_else(|| backend.identity().model, str::to_owned),
        sampling,
        trace_id,
        disclaimer: DISCLAIMER.to_owned(),
    })
}

/// Route, then generate.
pub fn answer_query(
    query: &str,
    rules: &KeywordRuleset,
    backend: &dyn ModelBackend,
    sampling: SamplingParams,
    model_ref: Option<&str>,
    ids: &IdGenerator,
) -> Result<InferenceResult, InferError> {
    let (task, _) = route_task(rules, query)?;
    generate(query, task, backend, sampling, model_ref, ids)
}
