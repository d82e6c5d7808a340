use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use indexmap::IndexMap;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{
    CycleRecord, CycleReport, CycleStatus, Decision, LoopError, MeanRatings, ReviewItem, ReviewStatus,
    ReviewVerdict, VerdictCounts,
};
use crate::backend::ModelBackend;
use crate::corpus::{DatasetStore, DatasetVersion, Provenance, QaItem, TaskLabel, CYCLE_ID_PREFIX};
use crate::fsio::{append_line, write_atomic};
use crate::infer::{generate, route_task, KeywordRuleset, SamplingParams};

/// Inputs for [`Orchestrator::open_cycle`].
pub struct OpenCycleRequest<'a> {
    pub dataset: u64,
    pub queries: &'a [String],
    pub backend: &'a dyn ModelBackend,
    pub rules: &'a KeywordRuleset,
    /// When set, the first `n` queries routed to each task are used and all
    /// other queries are dropped.
    pub quota: Option<&'a BTreeMap<TaskLabel, usize>>,
    /// Query `i` is sampled with `seed + i` when a seed is set.
    pub sampling: SamplingParams,
    pub model_ref: Option<&'a str>,
}

#[derive(Clone, Serialize, Deserialize)]
struct CycleState {
    record: CycleRecord,
    items: IndexMap<String, ReviewItem>,
}

#[derive(Serialize)]
struct VerdictLogLine<'a> {
    cycle_id: &'a str,
    decided_at: chrono::DateTime<chrono::Utc>,
    verdict: &'a ReviewVerdict,
}

#[derive(Default)]
struct State {
    cycles: BTreeMap<String, CycleState>,
    review_index: HashMap<String, String>,
    idempotency: HashMap<String, String>,
}

impl State {
    fn insert(&mut self, cycle: CycleState) {
        for (rid, item) in &cycle.items {
            self.review_index.insert(rid.clone(), cycle.record.cycle_id.clone());
            if let Some(key) = item.verdict.as_ref().and_then(|v| v.idempotency_key.clone()) {
                self.idempotency.insert(key, rid.clone());
            }
        }
        self.cycles.insert(cycle.record.cycle_id.clone(), cycle);
    }

    fn cycle_of(&self, review_id: &str) -> Result<String, LoopError> {
        self.review_index
            .get(review_id)
            .cloned()
            .ok_or_else(|| LoopError::UnknownReview(review_id.to_owned()))
    }
}

/// Cycle bookkeeping over a dataset store. All mutations take one lock, so a
/// merge never interleaves with verdict submission. With a root directory,
/// each cycle is snapshotted to `cycles/<id>.json` and every verdict is
/// appended to `reviews/verdicts.jsonl`.
pub struct Orchestrator {
    store: Arc<DatasetStore>,
    root: Option<PathBuf>,
    state: Mutex<State>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> LoopError {
    LoopError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn check_version(item: &ReviewItem, expected: Option<u64>) -> Result<(), LoopError> {
    match expected {
        Some(v) if v != item.version => Err(LoopError::VersionConflict {
            review_id: item.review_id.clone(),
            expected: v,
            actual: item.version,
        }),
        _ => Ok(()),
    }
}

impl Orchestrator {
    /// Uses the store's root directory for persistence, if it has one.
    pub fn new(store: Arc<DatasetStore>) -> Result<Self, LoopError> {
        let root = store.root().map(Path::to_path_buf);
        let mut state = State::default();
        if let Some(root) = &root {
            let dir = root.join("cycles");
            if dir.is_dir() {
                for entry in std::fs::read_dir(&dir).map_err(|e| io_err(&dir, e))? {
                    let path = entry.map_err(|e| io_err(&dir, e))?.path();
                    if path.extension().and_then(|e| e.to_str()) != Some("json") {
                        continue;
                    }
                    let raw = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
                    let cycle: CycleState = serde_json::from_str(&raw).map_err(|e| io_err(&path, e))?;
                    state.insert(cycle);
                }
            }
        }
        Ok(Self {
            store,
            root,
            state: Mutex::new(state),
        })
    }

    pub fn store(&self) -> &Arc<DatasetStore> {
        &self.store
    }

    fn persist(&self, cycle: &CycleState) -> Result<(), LoopError> {
        if let Some(root) = &self.root {
            let path = root.join("cycles").join(format!("{}.json", cycle.record.cycle_id));
            let body = serde_json::to_vec_pretty(cycle).expect("cycle serializes");
            write_atomic(&path, &body).map_err(|e| io_err(&path, e))?;
        }
        Ok(())
    }

    fn log_verdict(&self, item: &ReviewItem) -> Result<(), LoopError> {
        if let (Some(root), Some(verdict), Some(decided_at)) = (&self.root, &item.verdict, item.decided_at) {
            let path = root.join("reviews").join("verdicts.jsonl");
            let line = serde_json::to_string(&VerdictLogLine {
                cycle_id: &item.cycle_id,
                decided_at,
                verdict,
            })
            .expect("verdict serializes");
            append_line(&path, &line).map_err(|e| io_err(&path, e))?;
        }
        Ok(())
    }

    /// Routes and answers each query and queues the results for review.
    pub fn open_cycle(&self, req: OpenCycleRequest<'_>) -> Result<(CycleRecord, Vec<ReviewItem>), LoopError> {
        let base = self.store.require(req.dataset)?;
        if req.queries.is_empty() {
            return Err(LoopError::EmptyQueries);
        }
        let mut routed = Vec::with_capacity(req.queries.len());
        for q in req.queries {
            routed.push((q.as_str(), route_task(req.rules, q)?.0));
        }
        if let Some(quota) = req.quota {
            let mut taken: BTreeMap<TaskLabel, usize> = BTreeMap::new();
            routed.retain(|(_, task)| {
                let want = quota.get(task).copied().unwrap_or(0);
                let n = taken.entry(*task).or_default();
                let keep = *n < want;
                *n += usize::from(keep);
                keep
            });
            for (task, want) in quota {
                let got = taken.get(task).copied().unwrap_or(0);
                if got < *want {
                    return Err(LoopError::QuotaUnsatisfiable {
                        task: *task,
                        requested: *want,
                        available: got,
                    });
                }
            }
            if routed.is_empty() {
                return Err(LoopError::EmptyQueries);
            }
        }

        let ids = self.store.ids();
        let mut results = Vec::with_capacity(routed.len());
        for (i, (query, task)) in routed.iter().enumerate() {
            let mut sp = req.sampling.clone();
            sp.seed = sp.seed.map(|s| s.wrapping_add(i as u64));
            results.push(generate(query, *task, req.backend, sp, req.model_ref, ids)?);
        }

        let cycle_id = format!("{CYCLE_ID_PREFIX}{}", ids.next_ulid());
        let items: IndexMap<String, ReviewItem> = results
            .into_iter()
            .map(|inference| {
                let review_id = ids.next_prefixed("rev");
                let item = ReviewItem {
                    review_id: review_id.clone(),
                    cycle_id: cycle_id.clone(),
                    inference,
                    status: ReviewStatus::Pending,
                    claimed_by: None,
                    decided_at: None,
                    verdict: None,
                    version: 0,
                };
                (review_id, item)
            })
            .collect();
        let record = CycleRecord {
            cycle_id: cycle_id.clone(),
            input_dataset: base.version_id(),
            inference_count: items.len(),
            verdicts: VerdictCounts::default(),
            output_dataset: None,
            status: CycleStatus::Open,
            created_at: ids.now(),
            artifact_id: None,
        };
        let cycle = CycleState { record, items };
        let mut state = self.state.lock();
        self.persist(&cycle)?;
        let out: (CycleRecord, Vec<ReviewItem>) = (cycle.record.clone(), cycle.items.values().cloned().collect());
        state.insert(cycle);
        tracing::info!(%cycle_id, items = out.1.len(), "cycle opened");
        Ok(out)
    }

    /// Marks a pending item as claimed by `reviewer`. Re-claiming by the same
    /// reviewer is a no-op.
    pub fn claim(&self, review_id: &str, reviewer: &str, expected_version: Option<u64>) -> Result<ReviewItem, LoopError> {
        if reviewer.trim().is_empty() {
            return Err(LoopError::Validation("reviewer is empty".into()));
        }
        let mut state = self.state.lock();
        let cycle_id = state.cycle_of(review_id)?;
        let cycle = state.cycles.get_mut(&cycle_id).expect("indexed cycle exists");
        let item = cycle.items.get_mut(review_id).expect("indexed item exists");
        check_version(item, expected_version)?;
        match (item.status, item.claimed_by.as_deref()) {
            (ReviewStatus::Decided, _) => return Err(LoopError::AlreadyDecided(review_id.to_owned())),
            (ReviewStatus::Claimed, Some(who)) if who == reviewer => return Ok(item.clone()),
            (ReviewStatus::Claimed, Some(who)) => {
                return Err(LoopError::ClaimConflict {
                    review_id: review_id.to_owned(),
                    claimed_by: who.to_owned(),
                })
            }
            _ => {}
        }
        let before = item.clone();
        item.status = ReviewStatus::Claimed;
        item.claimed_by = Some(reviewer.to_owned());
        item.version += 1;
        let out = item.clone();
        if let Err(e) = self.persist(cycle) {
            *cycle.items.get_mut(review_id).expect("item exists") = before;
            return Err(e);
        }
        Ok(out)
    }

    /// Decides an item. A claimed item may only be decided by its claimant.
    pub fn submit_verdict(&self, verdict: ReviewVerdict, expected_version: Option<u64>) -> Result<ReviewItem, LoopError> {
        let mut state = self.state.lock();
        if let Some(key) = &verdict.idempotency_key {
            if let Some(rid) = state.idempotency.get(key) {
                if *rid != verdict.review_id {
                    return Err(LoopError::Validation(format!(
                        "idempotency key {key:?} was used for another review item"
                    )));
                }
                let cycle_id = state.cycle_of(rid)?;
                return Ok(state.cycles[&cycle_id].items[rid.as_str()].clone());
            }
        }
        let cycle_id = state.cycle_of(&verdict.review_id)?;
        let now = self.store.ids().now();
        let cycle = state.cycles.get_mut(&cycle_id).expect("indexed cycle exists");
        if cycle.record.status != CycleStatus::Open {
            return Err(LoopError::AlreadyMerged(cycle_id));
        }
        let item = cycle.items.get_mut(&verdict.review_id).expect("indexed item exists");
        if item.status == ReviewStatus::Decided {
            return Err(LoopError::AlreadyDecided(verdict.review_id.clone()));
        }
        check_version(item, expected_version)?;
        if let Some(who) = item.claimed_by.as_deref() {
            if who != verdict.reviewer {
                return Err(LoopError::ClaimConflict {
                    review_id: verdict.review_id.clone(),
                    claimed_by: who.to_owned(),
                });
            }
        }
        verdict
            .validate(&item.inference.response)
            .map_err(LoopError::Validation)?;

        let before_item = item.clone();
        let before_counts = cycle.record.verdicts;
        item.status = ReviewStatus::Decided;
        item.decided_at = Some(now);
        item.claimed_by.get_or_insert_with(|| verdict.reviewer.clone());
        item.verdict = Some(verdict.clone());
        item.version += 1;
        let out = item.clone();
        cycle.record.verdicts.add(verdict.decision);
        if let Err(e) = self.persist(cycle).and_then(|_| self.log_verdict(&out)) {
            *cycle.items.get_mut(&verdict.review_id).expect("item exists") = before_item;
            cycle.record.verdicts = before_counts;
            self.persist(cycle).ok();
            return Err(e);
        }
        if let Some(key) = verdict.idempotency_key {
            state.idempotency.insert(key, verdict.review_id);
        }
        Ok(out)
    }

    /// Appends approved and edited answers to the cycle's input dataset as
    /// expert-validated items.
    pub fn merge_cycle(&self, cycle_id: &str) -> Result<Arc<DatasetVersion>, LoopError> {
        let mut state = self.state.lock();
        let cycle = state
            .cycles
            .get_mut(cycle_id)
            .ok_or_else(|| LoopError::UnknownCycle(cycle_id.to_owned()))?;
        if cycle.record.status != CycleStatus::Open {
            return Err(LoopError::AlreadyMerged(cycle_id.to_owned()));
        }
        let pending: Vec<String> = cycle
            .items
            .values()
            .filter(|i| i.status != ReviewStatus::Decided)
            .map(|i| i.review_id.clone())
            .collect();
        if !pending.is_empty() {
            return Err(LoopError::PendingItems {
                cycle_id: cycle_id.to_owned(),
                pending,
            });
        }
        let base = self.store.require(cycle.record.input_dataset)?;
        let ids = self.store.ids();
        let new_items: Vec<QaItem> = cycle
            .items
            .values()
            .filter_map(|item| {
                item.validated_answer().map(|answer| QaItem {
                    id: ids.next_id(),
                    query: item.inference.query.clone(),
                    answer: answer.to_owned(),
                    task: item.inference.task_pred,
                    provenance: Provenance::ExpertValidated,
                    source_ref: Some(cycle_id.to_owned()),
                    created_at: ids.now(),
                })
            })
            .collect();
        let version = self.store.extend_version(&base, new_items)?;
        cycle.record.output_dataset = Some(version.version_id());
        cycle.record.status = CycleStatus::Merged;
        self.persist(cycle)?;
        tracing::info!(%cycle_id, version = version.version_id(), size = version.len(), "cycle merged");
        Ok(version)
    }

    /// Records that an adapter was trained on the cycle's output dataset.
    pub fn mark_trained(&self, cycle_id: &str, artifact_id: &str) -> Result<CycleRecord, LoopError> {
        let mut state = self.state.lock();
        let cycle = state
            .cycles
            .get_mut(cycle_id)
            .ok_or_else(|| LoopError::UnknownCycle(cycle_id.to_owned()))?;
        if cycle.record.status == CycleStatus::Open {
            return Err(LoopError::NotMerged(cycle_id.to_owned()));
        }
        cycle.record.status = CycleStatus::Trained;
        cycle.record.artifact_id = Some(artifact_id.to_owned());
        self.persist(cycle)?;
        Ok(cycle.record.clone())
    }

    pub fn cycle(&self, cycle_id: &str) -> Result<CycleRecord, LoopError> {
        self.state
            .lock()
            .cycles
            .get(cycle_id)
            .map(|c| c.record.clone())
            .ok_or_else(|| LoopError::UnknownCycle(cycle_id.to_owned()))
    }

    /// Cycles in id order, which is creation order.
    pub fn cycles(&self) -> Vec<CycleRecord> {
        self.state.lock().cycles.values().map(|c| c.record.clone()).collect()
    }

    pub fn review(&self, review_id: &str) -> Result<ReviewItem, LoopError> {
        let state = self.state.lock();
        let cycle_id = state.cycle_of(review_id)?;
        Ok(state.cycles[&cycle_id].items[review_id].clone())
    }

    /// Review items ordered by review id, optionally filtered.
    pub fn review_queue(&self, status: Option<ReviewStatus>, cycle_id: Option<&str>) -> Vec<ReviewItem> {
        let state = self.state.lock();
        let mut items: Vec<ReviewItem> = state
            .cycles
            .values()
            .filter(|c| cycle_id.is_none_or(|id| c.record.cycle_id == id))
            .flat_map(|c| c.items.values())
            .filter(|i| status.is_none_or(|s| i.status == s))
            .cloned()
            .collect();
        items.sort_by(|a, b| a.review_id.cmp(&b.review_id));
        items
    }

    pub fn cycle_report(&self, cycle_id: &str) -> Result<CycleReport, LoopError> {
        let state = self.state.lock();
        let cycle = state
            .cycles
            .get(cycle_id)
            .ok_or_else(|| LoopError::UnknownCycle(cycle_id.to_owned()))?;
        let r = &cycle.record;
        let mut by_task: BTreeMap<TaskLabel, VerdictCounts> = BTreeMap::new();
        let mut sums = [0u64; 3];
        let mut decided = 0usize;
        for item in cycle.items.values() {
            if let Some(v) = &item.verdict {
                by_task.entry(item.inference.task_pred).or_default().add(v.decision);
                sums[0] += u64::from(v.ratings.accuracy);
                sums[1] += u64::from(v.ratings.appropriateness);
                sums[2] += u64::from(v.ratings.empathy);
                decided += 1;
            }
        }
        let mean_ratings = (decided > 0).then(|| {
            let d = decided as f64;
            MeanRatings {
                accuracy: sums[0] as f64 / d,
                appropriateness: sums[1] as f64 / d,
                empathy: sums[2] as f64 / d,
            }
        });
        let input_size = self.store.get(r.input_dataset).map_or(0, |v| v.len());
        let output_size = r.output_dataset.and_then(|id| self.store.get(id)).map(|v| v.len());
        Ok(CycleReport {
            cycle_id: r.cycle_id.clone(),
            status: r.status,
            input_dataset: r.input_dataset,
            output_dataset: r.output_dataset,
            inference_count: r.inference_count,
            pending: r.inference_count - decided,
            verdicts: r.verdicts,
            by_task,
            mean_ratings,
            merged_count: r.verdicts.merged(),
            input_size,
            output_size,
            dataset_delta: output_size.map(|o| o.saturating_sub(input_size)),
            artifact_id: r.artifact_id.clone(),
        })
    }

    /// Expert-validated items in `version` whose `source_ref` does not name a
    /// merged (or trained) cycle.
    pub fn unresolved_validated_items(&self, version: &DatasetVersion) -> Vec<String> {
        let state = self.state.lock();
        version
            .items()
            .iter()
            .filter(|i| i.provenance == Provenance::ExpertValidated)
            .filter(|i| {
                !i.source_ref
                    .as_deref()
                    .and_then(|c| state.cycles.get(c))
                    .is_some_and(|c| c.record.status != CycleStatus::Open)
            })
            .map(|i| i.id.clone())
            .collect()
    }
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Approve => "approve",
            Decision::Edit => "edit",
            Decision::Reject => "reject",
        }
    }
}
