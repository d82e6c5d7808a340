//! Text-generation backends.
//!
//! Both the vignette generator and the model under evaluation sit behind the
//! same [`TextBackend`] trait. Shipped implementations:
//!
//! - [`ScriptedBackend`]: replies read from a fixture, keyed by call index or
//!   by prompt substring. Used for failure injection and exact-outcome tests.
//! - [`MockBackend`]: deterministic in `(prompt, seed)`; composes vignettes or
//!   answers from fixed phrase pools.
//! - [`HttpBackend`]: an OpenAI-compatible chat-completions client.

mod http;
mod mock;

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, HttpBackendConfig};
pub use mock::{MockBackend, MockMode};

use crate::infer::SamplingParams;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendIdentity {
    pub name: String,
    pub model: String,
}

impl std::fmt::Display for BackendIdentity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.name, self.model)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum BackendError {
    #[error("backend timed out")]
    Timeout,
    #[error("backend refused the request: {0}")]
    Refused(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
    #[error("backend failure: {0}")]
    Failed(String),
}

impl BackendError {
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Timeout | BackendError::Transport(_))
    }
}

pub trait TextBackend: Send + Sync {
    fn identity(&self) -> BackendIdentity;

    fn generate(&self, prompt: &str, sampling: &SamplingParams) -> Result<String, BackendError>;
}

/// Backend role names used where the pipeline distinguishes the vignette
/// generator from the model being served or evaluated.
pub use self::TextBackend as GeneratorBackend;
pub use self::TextBackend as ModelBackend;

/// One scripted reply: plain text, or `{"error": "timeout" | "refused" | ..., "message": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedReply {
    Text(String),
    Error {
        error: String,
        #[serde(default)]
        message: Option<String>,
    },
}

impl ScriptedReply {
    pub fn text(s: impl Into<String>) -> Self {
        ScriptedReply::Text(s.into())
    }

    pub fn error(kind: &str) -> Self {
        ScriptedReply::Error {
            error: kind.to_owned(),
            message: None,
        }
    }

    fn resolve(&self) -> Result<String, BackendError> {
        match self {
            ScriptedReply::Text(t) => Ok(t.clone()),
            ScriptedReply::Error { error, message } => {
                let msg = message.clone().unwrap_or_else(|| error.clone());
                Err(match error.as_str() {
                    "timeout" => BackendError::Timeout,
                    "refused" => BackendError::Refused(msg),
                    "transport" => BackendError::Transport(msg),
                    "config" => BackendError::Config(msg),
                    _ => BackendError::Failed(msg),
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchRule {
    pub contains: String,
    pub reply: ScriptedReply,
}

/// Fixture document for [`ScriptedBackend`].
///
/// Resolution order for call `n`: `calls[n]` if present, then the first
/// `matches` rule whose needle occurs in the prompt, then `fallback`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptFixture {
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub calls: Vec<ScriptedReply>,
    #[serde(default)]
    pub matches: Vec<MatchRule>,
    #[serde(default)]
    pub fallback: Option<ScriptedReply>,
}

#[derive(Debug)]
pub struct ScriptedBackend {
    fixture: ScriptFixture,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(fixture: ScriptFixture) -> Self {
        Self {
            fixture,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn from_calls(calls: impl IntoIterator<Item = ScriptedReply>) -> Self {
        Self::new(ScriptFixture {
            calls: calls.into_iter().collect(),
            ..ScriptFixture::default()
        })
    }

    pub fn from_json(src: &str) -> Result<Self, BackendError> {
        serde_json::from_str(src)
            .map(Self::new)
            .map_err(|e| BackendError::Config(format!("bad script fixture: {e}")))
    }

    pub fn calls_made(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl TextBackend for ScriptedBackend {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity {
            name: "scripted".into(),
            model: self.fixture.model.clone().unwrap_or_else(|| "script".into()),
        }
    }

    fn generate(&self, prompt: &str, _sampling: &SamplingParams) -> Result<String, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        self.fixture
            .calls
            .get(n)
            .or_else(|| {
                self.fixture
                    .matches
                    .iter()
                    .find(|m| prompt.contains(&m.contains))
                    .map(|m| &m.reply)
            })
            .or(self.fixture.fallback.as_ref())
            .ok_or_else(|| BackendError::Failed(format!("no scripted reply for call {n}")))?
            .resolve()
    }
}
