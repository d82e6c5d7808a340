use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use super::{
    check_unique_ids, is_cycle_ref, Benchmark, CorpusError, DatasetVersion, Provenance, QaItem,
    TaskCounts, TaskLabel,
};
use crate::fsio::{is_safe_name, write_atomic};
use crate::ids::IdGenerator;

/// Sidecar manifest written next to every dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionManifest {
    pub version_id: u64,
    pub parent: Option<u64>,
    pub manifest_hash: String,
    pub item_count: usize,
    pub task_counts: TaskCounts,
    pub created_at: DateTime<Utc>,
}

/// Ingest record as supplied by a caller; every field is checked.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: Option<String>,
    pub query: Option<String>,
    pub answer: Option<String>,
    pub task: Option<String>,
    pub source_ref: Option<String>,
}

impl RawRecord {
    pub fn new(query: &str, answer: &str, task: TaskLabel) -> Self {
        Self {
            query: Some(query.to_owned()),
            answer: Some(answer.to_owned()),
            task: Some(task.as_str().to_owned()),
            ..Self::default()
        }
    }
}

/// Versioned dataset and benchmark store.
///
/// Writers are serialized by the version-map lock; published versions are
/// shared as `Arc`s and may be read from any thread. With a root directory,
/// every version is persisted as `datasets/vNNNNNN.jsonl` plus
/// `datasets/vNNNNNN.manifest.json`, and benchmarks as `benchmarks/<id>.jsonl`.
#[derive(Debug)]
pub struct DatasetStore {
    root: Option<PathBuf>,
    ids: Arc<IdGenerator>,
    versions: RwLock<BTreeMap<u64, Arc<DatasetVersion>>>,
    benchmarks: RwLock<BTreeMap<String, Arc<Benchmark>>>,
}

impl DatasetStore {
    pub fn in_memory(ids: Arc<IdGenerator>) -> Self {
        Self {
            root: None,
            ids,
            versions: RwLock::new(BTreeMap::new()),
            benchmarks: RwLock::new(BTreeMap::new()),
        }
    }

    /// Opens (or initializes) a store directory, verifying every manifest
    /// digest and parent/child lineage on load.
    pub fn open(root: impl Into<PathBuf>, ids: Arc<IdGenerator>) -> Result<Self, CorpusError> {
        let root = root.into();
        let datasets = root.join("datasets");
        let benchmarks_dir = root.join("benchmarks");
        for dir in [&datasets, &benchmarks_dir] {
            fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
        }

        let mut versions = BTreeMap::new();
        for path in sorted_entries(&datasets, ".manifest.json")? {
            let raw = fs::read_to_string(&path).map_err(|e| CorpusError::io(&path, e))?;
            let manifest: VersionManifest = serde_json::from_str(&raw).map_err(|e| CorpusError::Parse {
                what: path.display().to_string(),
                line: e.line(),
                message: e.to_string(),
            })?;
            let data_path = datasets.join(format!("v{:06}.jsonl", manifest.version_id));
            let body = fs::read_to_string(&data_path).map_err(|e| CorpusError::io(&data_path, e))?;
            let version = DatasetVersion::from_parts(&manifest, &body)?;
            versions.insert(version.version_id(), Arc::new(version));
        }
        for v in versions.values() {
            if let Some(p) = v.parent() {
                let parent = versions.get(&p).ok_or(CorpusError::UnknownVersion(p))?;
                if p >= v.version_id() || !v.items().starts_with(parent.items()) {
                    return Err(CorpusError::ManifestMismatch {
                        version_id: v.version_id(),
                        reason: format!("not an append-only child of version {p}"),
                    });
                }
            }
        }

        let mut benchmarks = BTreeMap::new();
        for path in sorted_entries(&benchmarks_dir, ".jsonl")? {
            let id = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(".jsonl"))
                .unwrap_or_default()
                .to_owned();
            let body = fs::read_to_string(&path).map_err(|e| CorpusError::io(&path, e))?;
            let bench = Benchmark::from_jsonl(id.clone(), &body)?;
            benchmarks.insert(id, Arc::new(bench));
        }

        Ok(Self {
            root: Some(root),
            ids,
            versions: RwLock::new(versions),
            benchmarks: RwLock::new(benchmarks),
        })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn ids(&self) -> &Arc<IdGenerator> {
        &self.ids
    }

    pub fn get(&self, version_id: u64) -> Option<Arc<DatasetVersion>> {
        self.versions.read().get(&version_id).cloned()
    }

    pub fn require(&self, version_id: u64) -> Result<Arc<DatasetVersion>, CorpusError> {
        self.get(version_id).ok_or(CorpusError::UnknownVersion(version_id))
    }

    /// All versions in ascending id order.
    pub fn list(&self) -> Vec<Arc<DatasetVersion>> {
        self.versions.read().values().cloned().collect()
    }

    pub fn latest(&self) -> Option<Arc<DatasetVersion>> {
        self.versions.read().values().next_back().cloned()
    }

    /// Ancestry of a version, oldest first, ending with the version itself.
    pub fn lineage(&self, version_id: u64) -> Result<Vec<u64>, CorpusError> {
        let versions = self.versions.read();
        let mut chain = Vec::new();
        let mut cur = Some(version_id);
        while let Some(id) = cur {
            let v = versions.get(&id).ok_or(CorpusError::UnknownVersion(id))?;
            chain.push(id);
            cur = v.parent();
        }
        chain.reverse();
        Ok(chain)
    }

    /// Validates raw records and publishes them as a new root version.
    /// Records without an id get a fresh ULID.
    pub fn ingest_items(
        &self,
        records: &[RawRecord],
        provenance: Provenance,
    ) -> Result<Arc<DatasetVersion>, CorpusError> {
        let mut caller_ids = HashSet::new();
        let mut checked = Vec::with_capacity(records.len());
        for (index, rec) in records.iter().enumerate() {
            let query = required(index, "query", rec.query.as_deref())?;
            let answer = required(index, "answer", rec.answer.as_deref())?;
            let task_raw = required(index, "task", rec.task.as_deref())?;
            let task: TaskLabel = task_raw.parse().map_err(|_| CorpusError::Schema {
                index,
                field: "task",
                reason: format!("has unknown value {task_raw:?}"),
            })?;
            if provenance == Provenance::ExpertValidated
                && !rec.source_ref.as_deref().is_some_and(is_cycle_ref)
            {
                return Err(CorpusError::Schema {
                    index,
                    field: "source_ref",
                    reason: "must name a cycle id for expert_validated records".into(),
                });
            }
            if let Some(id) = &rec.id {
                if id.trim().is_empty() {
                    return Err(CorpusError::Schema {
                        index,
                        field: "id",
                        reason: "is empty".into(),
                    });
                }
                if !caller_ids.insert(id.clone()) {
                    return Err(CorpusError::DuplicateId(id.clone()));
                }
            }
            checked.push((rec.id.clone(), query.to_owned(), answer.to_owned(), task, rec.source_ref.clone()));
        }

        self.publish(|version_id| {
            let created_at = self.ids.now();
            let items: Vec<QaItem> = checked
                .into_iter()
                .map(|(id, query, answer, task, source_ref)| QaItem {
                    id: id.unwrap_or_else(|| self.ids.next_id()),
                    query,
                    answer,
                    task,
                    provenance,
                    source_ref,
                    created_at,
                })
                .collect();
            Ok(DatasetVersion::new(version_id, items, None, created_at))
        })
        .map(|v| {
            tracing::info!(version = v.version_id(), items = v.len(), "ingested dataset version");
            v
        })
    }

    /// Publishes already-built items as a new root version.
    pub fn publish_items(&self, items: Vec<QaItem>) -> Result<Arc<DatasetVersion>, CorpusError> {
        for item in &items {
            item.validate().map_err(|reason| CorpusError::InvalidItem {
                id: item.id.clone(),
                reason,
            })?;
        }
        check_unique_ids(&items)?;
        self.publish(|version_id| Ok(DatasetVersion::new(version_id, items, None, self.ids.now())))
    }

    /// Publishes `base ++ new_items` as a child of `base`.
    pub fn extend_version(
        &self,
        base: &DatasetVersion,
        new_items: Vec<QaItem>,
    ) -> Result<Arc<DatasetVersion>, CorpusError> {
        match self.get(base.version_id()) {
            Some(stored) if stored.manifest_hash() == base.manifest_hash() => {}
            _ => return Err(CorpusError::UnknownVersion(base.version_id())),
        }
        for item in &new_items {
            item.validate().map_err(|reason| CorpusError::InvalidItem {
                id: item.id.clone(),
                reason,
            })?;
            if base.contains_id(&item.id) {
                return Err(CorpusError::DuplicateId(item.id.clone()));
            }
        }
        check_unique_ids(&new_items)?;

        self.publish(|version_id| {
            let mut items = base.items().to_vec();
            items.extend(new_items);
            Ok(DatasetVersion::new(version_id, items, Some(base.version_id()), self.ids.now()))
        })
    }

    fn publish(
        &self,
        build: impl FnOnce(u64) -> Result<DatasetVersion, CorpusError>,
    ) -> Result<Arc<DatasetVersion>, CorpusError> {
        let mut versions = self.versions.write();
        let next_id = versions.keys().next_back().map_or(1, |id| id + 1);
        let version = build(next_id)?;
        if let Some(root) = &self.root {
            let dir = root.join("datasets");
            let data = dir.join(format!("v{next_id:06}.jsonl"));
            write_atomic(&data, version.to_jsonl().as_bytes()).map_err(|e| CorpusError::io(&data, e))?;
            let manifest = dir.join(format!("v{next_id:06}.manifest.json"));
            let body = serde_json::to_vec_pretty(&version.manifest()).expect("manifest serializes");
            write_atomic(&manifest, &body).map_err(|e| CorpusError::io(&manifest, e))?;
        }
        let version = Arc::new(version);
        versions.insert(next_id, version.clone());
        Ok(version)
    }

    pub fn put_benchmark(&self, benchmark: Benchmark) -> Result<Arc<Benchmark>, CorpusError> {
        if !is_safe_name(&benchmark.id) {
            return Err(CorpusError::InvalidMcq {
                id: benchmark.id.clone(),
                reason: "benchmark id must be alphanumeric with - _ .".into(),
            });
        }
        let mut benchmarks = self.benchmarks.write();
        if let Some(root) = &self.root {
            let path = root.join("benchmarks").join(format!("{}.jsonl", benchmark.id));
            write_atomic(&path, benchmark.to_jsonl().as_bytes()).map_err(|e| CorpusError::io(&path, e))?;
        }
        let bench = Arc::new(benchmark);
        benchmarks.insert(bench.id.clone(), bench.clone());
        Ok(bench)
    }

    pub fn benchmark(&self, id: &str) -> Result<Arc<Benchmark>, CorpusError> {
        self.benchmarks
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| CorpusError::UnknownBenchmark(id.to_owned()))
    }

    pub fn benchmark_ids(&self) -> Vec<String> {
        self.benchmarks.read().keys().cloned().collect()
    }
}

fn required<'a>(index: usize, field: &'static str, value: Option<&'a str>) -> Result<&'a str, CorpusError> {
    match value {
        None => Err(CorpusError::Schema {
            index,
            field,
            reason: "is missing".into(),
        }),
        Some(v) if v.trim().is_empty() => Err(CorpusError::Schema {
            index,
            field,
            reason: "is empty".into(),
        }),
        Some(v) => Ok(v),
    }
}

fn sorted_entries(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>, CorpusError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CorpusError::io(dir, e))? {
        let path = entry.map_err(|e| CorpusError::io(dir, e))?.path();
        if path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with(suffix) && !n.ends_with(".tmp"))
        {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
