//! Supervised fine-tuning payloads, hyperparameter grids and trainer dispatch.

mod registry;
mod trainer;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use registry::ArtifactRegistry;
pub use trainer::{CommandTrainer, MockTrainer, TrainerBackend, TrainerOutput, TrainingJob};

use crate::backend::BackendError;
use crate::corpus::{DatasetVersion, QaItem};
use crate::prompt::{render_qa, QA_TEMPLATE};

#[derive(Debug, Error)]
pub enum FinetuneError {
    #[error("dataset version {0} is empty")]
    EmptyDataset(u64),
    #[error("no SFT records to train on")]
    NoRecords,
    #[error("unknown SFT template {0:?}")]
    UnknownTemplate(String),
    #[error("search grid has no {0}")]
    EmptyGrid(&'static str),
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("trainer backend failed: {0}")]
    Backend(#[from] BackendError),
    #[error("unknown artifact {0}")]
    UnknownArtifact(String),
    #[error("artifact {0} already registered")]
    DuplicateArtifact(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub rank: u32,
    pub alpha: f64,
    pub dropout: f64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            rank: 16,
            alpha: 32.0,
            dropout: 0.05,
        }
    }
}

/// Declarative fine-tuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub base_model: String,
    pub learning_rate: f64,
    pub epochs: u32,
    pub adapter: AdapterConfig,
    pub seed: u64,
    pub dataset_version: u64,
    /// Continue from an existing adapter instead of the base weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resume_from: Option<String>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), FinetuneError> {
        let bad = |m: String| Err(FinetuneError::InvalidConfig(m));
        if self.base_model.trim().is_empty() {
            return bad("base_model is empty".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.adapter.rank == 0 {
            return bad("adapter rank must be positive".into());
        }
        if !(self.adapter.alpha.is_finite() && self.adapter.alpha > 0.0) {
            return bad(format!("adapter alpha {} must be positive", self.adapter.alpha));
        }
        if !(0.0..1.0).contains(&self.adapter.dropout) {
            return bad(format!("adapter dropout {} must be in [0, 1)", self.adapter.dropout));
        }
        Ok(())
    }

    /// Canonical JSON document handed to trainers and hashed into mock ids.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("RunConfig serializes")
    }
}

/// One loss-masked training example. The loss covers `completion` only;
/// `boundary` is the length of `prompt` in characters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub prompt: String,
    pub completion: String,
    pub boundary: usize,
}

impl SftRecord {
    pub fn text(&self) -> String {
        format!("{}{}", self.prompt, self.completion)
    }

    /// Splits [`text`](Self::text) at the boundary: (masked prefix, trained suffix).
    pub fn split(&self) -> (String, String) {
        let text = self.text();
        let cut = text
            .char_indices()
            .nth(self.boundary)
            .map_or(text.len(), |(i, _)| i);
        (text[..cut].to_owned(), text[cut..].to_owned())
    }
}

pub fn sft_record(item: &QaItem) -> SftRecord {
    let prompt = render_qa(&item.query, item.task);
    SftRecord {
        boundary: prompt.chars().count(),
        prompt,
        completion: item.answer.trim().to_owned(),
    }
}

/// One record per item, ordered by item id.
pub fn export_sft(version: &DatasetVersion, template_id: &str) -> Result<Vec<SftRecord>, FinetuneError> {
    if template_id != QA_TEMPLATE {
        return Err(FinetuneError::UnknownTemplate(template_id.to_owned()));
    }
    if version.is_empty() {
        return Err(FinetuneError::EmptyDataset(version.version_id()));
    }
    let mut items: Vec<&QaItem> = version.items().iter().collect();
    items.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(items.into_iter().map(sft_record).collect())
}

/// SFT export file body: one `{prompt, completion, boundary}` object per line.
pub fn sft_jsonl(records: &[SftRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("SftRecord serializes"));
        out.push('\n');
    }
    out
}

/// Learning-rate × epoch search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub learning_rates: Vec<f64>,
    pub epochs: Vec<u32>,
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self {
            learning_rates: vec![5e-6, 5e-5, 2e-4, 1e-3],
            epochs: vec![1, 3, 5],
        }
    }
}

/// Cartesian product of the grid, learning rate ascending then epochs
/// ascending, duplicates removed.
pub fn grid_configs(
    base_model: &str,
    grid: &SearchGrid,
    adapter_defaults: AdapterConfig,
    dataset_version: u64,
    seed: u64,
) -> Result<Vec<RunConfig>, FinetuneError> {
    let mut lrs = grid.learning_rates.clone();
    lrs.sort_by(f64::total_cmp);
    lrs.dedup();
    let mut epochs = grid.epochs.clone();
    epochs.sort_unstable();
    epochs.dedup();
    if lrs.is_empty() {
        return Err(FinetuneError::EmptyGrid("learning rates"));
    }
    if epochs.is_empty() {
        return Err(FinetuneError::EmptyGrid("epochs"));
    }
    let mut out = Vec::with_capacity(lrs.len() * epochs.len());
    for lr in &lrs {
        for ep in &epochs {
            let cfg = RunConfig {
                base_model: base_model.to_owned(),
                learning_rate: *lr,
                epochs: *ep,
                adapter: adapter_defaults,
                seed,
                dataset_version,
                resume_from: None,
            };
            cfg.validate()?;
            out.push(cfg);
        }
    }
    Ok(out)
}

/// Picks the best run by held-out accuracy; ties go to the lower learning
/// rate, then fewer epochs.
pub fn select_best<'a>(scored: &'a [(RunConfig, f64)]) -> Option<&'a (RunConfig, f64)> {
    scored.iter().min_by(|(a, acc_a), (b, acc_b)| {
        acc_b
            .total_cmp(acc_a)
            .then(a.learning_rate.total_cmp(&b.learning_rate))
            .then(a.epochs.cmp(&b.epochs))
    })
}

/// Trained-adapter reference with its full run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterArtifact {
    pub artifact_id: String,
    pub run_config: RunConfig,
    pub backend_report: BTreeMap<String, serde_json::Value>,
    pub storage_ref: String,
    /// Digest of the SFT export the adapter was trained on.
    pub records_digest: String,
}

/// Validates the config and delegates to the trainer. Failures never yield
/// an artifact.
pub fn run_training(
    records: &[SftRecord],
    config: &RunConfig,
    backend: &dyn TrainerBackend,
) -> Result<AdapterArtifact, FinetuneError> {
    if records.is_empty() {
        return Err(FinetuneError::NoRecords);
    }
    config.validate()?;
    let job = TrainingJob::new(records, config);
    let out = backend.train(&job)?;
    let artifact_id = out
        .artifact_id
        .unwrap_or_else(|| trainer::derived_artifact_id(&job.records_digest, config));
    tracing::info!(%artifact_id, lr = config.learning_rate, epochs = config.epochs, "training finished");
    Ok(AdapterArtifact {
        artifact_id,
        run_config: config.clone(),
        backend_report: out.report,
        storage_ref: out.storage_ref,
        records_digest: job.records_digest,
    })
}
