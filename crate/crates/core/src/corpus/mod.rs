//! Typed, versioned QA corpora and MCQ benchmarks.
//!
//! A [`DatasetVersion`] is an immutable snapshot. New versions are only ever
//! produced by [`DatasetStore::ingest_items`] (a new lineage root) or
//! [`DatasetStore::extend_version`] (an append-only child).

mod hash;
mod mcq;
mod store;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hash::{canonical_stream, manifest_hash};
pub use mcq::{Benchmark, McqItem, OptionLetter};
pub use store::{DatasetStore, RawRecord, VersionManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskLabel {
    Diagnosis,
    Treatment,
    Counseling,
}

impl TaskLabel {
    pub const ALL: [TaskLabel; 3] = [TaskLabel::Diagnosis, TaskLabel::Treatment, TaskLabel::Counseling];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskLabel::Diagnosis => "diagnosis",
            TaskLabel::Treatment => "treatment",
            TaskLabel::Counseling => "counseling",
        }
    }
}

impl fmt::Display for TaskLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown task label {0:?} (expected diagnosis, treatment or counseling)")]
pub struct UnknownTask(pub String);

impl FromStr for TaskLabel {
    type Err = UnknownTask;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "diagnosis" => Ok(TaskLabel::Diagnosis),
            "treatment" => Ok(TaskLabel::Treatment),
            "counseling" | "counselling" => Ok(TaskLabel::Counseling),
            _ => Err(UnknownTask(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    Synthetic,
    ExpertValidated,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Real => "real",
            Provenance::Synthetic => "synthetic",
            Provenance::ExpertValidated => "expert_validated",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "real" => Ok(Provenance::Real),
            "synthetic" => Ok(Provenance::Synthetic),
            "expert_validated" => Ok(Provenance::ExpertValidated),
            other => Err(format!("unknown provenance {other:?}")),
        }
    }
}

/// Prefix carried by every cycle id; expert-validated items point back at one.
pub const CYCLE_ID_PREFIX: &str = "cycle-";

pub fn is_cycle_ref(s: &str) -> bool {
    s.strip_prefix(CYCLE_ID_PREFIX).is_some_and(|rest| !rest.is_empty())
}

/// One (query, answer, task) triple with provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub id: String,
    pub query: String,
    pub answer: String,
    pub task: TaskLabel,
    pub provenance: Provenance,
    pub source_ref: Option<String>,
    pub created_at: DateTime<Utc>,
}

impl QaItem {
    /// Checks the per-item invariants.
    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("id is empty".into());
        }
        if self.query.trim().is_empty() {
            return Err("query is empty".into());
        }
        if self.answer.trim().is_empty() {
            return Err("answer is empty".into());
        }
        if self.provenance == Provenance::ExpertValidated
            && !self.source_ref.as_deref().is_some_and(is_cycle_ref)
        {
            return Err("expert_validated item must reference a cycle id in source_ref".into());
        }
        Ok(())
    }
}

pub type TaskCounts = BTreeMap<TaskLabel, usize>;

/// Immutable snapshot of a QA corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetVersion {
    version_id: u64,
    items: Vec<QaItem>,
    parent: Option<u64>,
    manifest_hash: String,
    created_at: DateTime<Utc>,
}

impl DatasetVersion {
    pub(crate) fn new(
        version_id: u64,
        items: Vec<QaItem>,
        parent: Option<u64>,
        created_at: DateTime<Utc>,
    ) -> Self {
        let manifest_hash = manifest_hash(&items);
        Self {
            version_id,
            items,
            parent,
            manifest_hash,
            created_at,
        }
    }

    pub fn version_id(&self) -> u64 {
        self.version_id
    }

    pub fn items(&self) -> &[QaItem] {
        &self.items
    }

    pub fn parent(&self) -> Option<u64> {
        self.parent
    }

    pub fn manifest_hash(&self) -> &str {
        &self.manifest_hash
    }

    pub fn created_at(&self) -> DateTime<Utc> {
        self.created_at
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.items.iter().any(|i| i.id == id)
    }

    pub fn manifest(&self) -> VersionManifest {
        VersionManifest {
            version_id: self.version_id,
            parent: self.parent,
            manifest_hash: self.manifest_hash.clone(),
            item_count: self.items.len(),
            task_counts: task_counts(self),
            created_at: self.created_at,
        }
    }

    /// Dataset file body: one JSON record per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for item in &self.items {
            out.push_str(&serde_json::to_string(item).expect("QaItem serializes"));
            out.push('\n');
        }
        out
    }

    /// Rebuilds a version from its manifest and dataset file body, checking
    /// the recorded digest and item count.
    pub fn from_parts(manifest: &VersionManifest, jsonl: &str) -> Result<Self, CorpusError> {
        let mut items = Vec::with_capacity(manifest.item_count);
        for (line_no, line) in jsonl.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let item: QaItem = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
                what: format!("dataset v{}", manifest.version_id),
                line: line_no + 1,
                message: e.to_string(),
            })?;
            item.validate().map_err(|reason| CorpusError::InvalidItem {
                id: item.id.clone(),
                reason,
            })?;
            items.push(item);
        }
        check_unique_ids(&items)?;
        if items.len() != manifest.item_count {
            return Err(CorpusError::ManifestMismatch {
                version_id: manifest.version_id,
                reason: format!("manifest lists {} items, file has {}", manifest.item_count, items.len()),
            });
        }
        let version = Self::new(manifest.version_id, items, manifest.parent, manifest.created_at);
        if version.manifest_hash != manifest.manifest_hash {
            return Err(CorpusError::ManifestMismatch {
                version_id: manifest.version_id,
                reason: format!(
                    "digest {} does not match recorded {}",
                    version.manifest_hash, manifest.manifest_hash
                ),
            });
        }
        Ok(version)
    }
}

/// Per-task item counts; every label is present, absent tasks count 0.
pub fn task_counts(version: &DatasetVersion) -> TaskCounts {
    count_tasks(version.items().iter().map(|i| i.task))
}

pub(crate) fn count_tasks(tasks: impl IntoIterator<Item = TaskLabel>) -> TaskCounts {
    let mut counts: TaskCounts = TaskLabel::ALL.iter().map(|t| (*t, 0)).collect();
    for t in tasks {
        *counts.entry(t).or_default() += 1;
    }
    counts
}

pub(crate) fn check_unique_ids(items: &[QaItem]) -> Result<(), CorpusError> {
    let mut seen = std::collections::HashSet::with_capacity(items.len());
    for item in items {
        if !seen.insert(item.id.as_str()) {
            return Err(CorpusError::DuplicateId(item.id.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("record {index}: field `{field}` {reason}")]
    Schema {
        index: usize,
        field: &'static str,
        reason: String,
    },
    #[error("duplicate item id {0}")]
    DuplicateId(String),
    #[error("unknown dataset version {0}")]
    UnknownVersion(u64),
    #[error("invalid item {id}: {reason}")]
    InvalidItem { id: String, reason: String },
    #[error("invalid MCQ item {id}: {reason}")]
    InvalidMcq { id: String, reason: String },
    #[error("unknown benchmark {0}")]
    UnknownBenchmark(String),
    #[error("manifest mismatch for version {version_id}: {reason}")]
    ManifestMismatch { version_id: u64, reason: String },
    #[error("{what}, line {line}: {message}")]
    Parse {
        what: String,
        line: usize,
        message: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
