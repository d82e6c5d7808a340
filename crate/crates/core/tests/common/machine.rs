//! Randomized driver for the review-cycle state machine with a shadow model.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use curaloop::backend::MockBackend;
use curaloop::corpus::{DatasetStore, Provenance};
use curaloop::ids::IdGenerator;
use curaloop::infer::{KeywordRuleset, SamplingParams};
use curaloop::looporchestrator::{
    CycleStatus, Decision, LoopError, OpenCycleRequest, Orchestrator, Ratings, ReviewStatus, ReviewVerdict,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Default, Clone)]
pub struct Stats {
    pub ops: usize,
    pub opened: usize,
    pub claims: usize,
    pub verdicts: usize,
    pub replays: usize,
    pub merges: usize,
    pub rejected_ops: usize,
    /// Safety violations observed; empty on a correct implementation.
    pub violations: Vec<String>,
}

#[derive(Default)]
struct Shadow {
    decided: HashMap<String, ReviewVerdict>,
    cycle_of: HashMap<String, String>,
    merged: HashSet<String>,
    keys: HashMap<String, String>,
}

const REVIEWERS: [&str; 3] = ["dr-a", "dr-b", "dr-c"];

/// Runs `ops` random operations and returns what happened.
pub fn run(seed: u64, ops: usize) -> Stats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let store = Arc::new(DatasetStore::in_memory(Arc::new(IdGenerator::seeded(seed))));
    let v1 = store.ingest_items(&super::seed_records(), Provenance::Real).unwrap();
    let orch = Orchestrator::new(store.clone()).unwrap();
    let rules = KeywordRuleset::shipped();
    let backend = MockBackend::answers("mock");
    let queries = super::cycle_queries();

    let mut shadow = Shadow::default();
    let mut cycles: Vec<String> = Vec::new();
    let mut reviews: Vec<String> = Vec::new();
    let mut stats = Stats::default();
    let mut head = v1.version_id();

    for step in 0..ops {
        stats.ops += 1;
        let op = rng.random_range(0..100);
        let open_cycles = cycles.iter().filter(|c| !shadow.merged.contains(*c)).count();
        let all_decided = shadow.decided.len() == reviews.len();
        if reviews.is_empty() || (op < 4 && open_cycles < 4) || (all_decided && op < 50) {
            let n = rng.random_range(1..=4);
            let qs: Vec<String> = (0..n).map(|_| queries[rng.random_range(0..queries.len())].clone()).collect();
            let dataset = if rng.random_bool(0.5) { head } else { v1.version_id() };
            let (cycle, items) = orch
                .open_cycle(OpenCycleRequest {
                    dataset,
                    queries: &qs,
                    backend: &backend,
                    rules: &rules,
                    quota: None,
                    sampling: SamplingParams::default().with_seed(step as u64),
                    model_ref: None,
                })
                .unwrap();
            for it in &items {
                shadow.cycle_of.insert(it.review_id.clone(), cycle.cycle_id.clone());
                reviews.push(it.review_id.clone());
            }
            cycles.push(cycle.cycle_id);
            stats.opened += 1;
        } else if op < 30 {
            let rid = &reviews[rng.random_range(0..reviews.len())];
            let who = REVIEWERS[rng.random_range(0..REVIEWERS.len())];
            match orch.claim(rid, who, None) {
                Ok(item) => {
                    stats.claims += 1;
                    if shadow.decided.contains_key(rid) {
                        stats.violations.push(format!("claim succeeded on decided {rid}"));
                    }
                    if item.status != ReviewStatus::Claimed {
                        stats.violations.push(format!("claim left {rid} in {:?}", item.status));
                    }
                }
                Err(_) => stats.rejected_ops += 1,
            }
        } else if op < 35 && !shadow.keys.is_empty() {
            let keyed: Vec<&String> = shadow.keys.values().collect();
            let rid = keyed[rng.random_range(0..keyed.len())].clone();
            let stored = shadow.decided[&rid].clone();
            match orch.submit_verdict(stored.clone(), None) {
                Ok(item) if item.verdict.as_ref() == Some(&stored) => stats.replays += 1,
                Ok(_) => stats.violations.push(format!("replay of {rid} changed the outcome")),
                Err(e) => stats.violations.push(format!("replay of {rid} was refused: {e}")),
            }
        } else if op < 85 {
            let open: Vec<&String> = reviews.iter().filter(|r| !shadow.decided.contains_key(*r)).collect();
            let rid = if !open.is_empty() && rng.random_bool(0.8) {
                open[rng.random_range(0..open.len())].clone()
            } else {
                reviews[rng.random_range(0..reviews.len())].clone()
            };
            let decision = [Decision::Approve, Decision::Edit, Decision::Reject][rng.random_range(0..3)];
            let edited_answer = match (decision, rng.random_range(0..10)) {
                (Decision::Edit, 0) => Some(String::new()),
                (Decision::Edit, _) => Some(format!("Revised answer {step}.")),
                (_, 0) => Some("stray edit".into()),
                _ => None,
            };
            let key = rng.random_bool(0.3).then(|| format!("k{}", rng.random_range(0..40)));
            let verdict = ReviewVerdict {
                review_id: rid.clone(),
                reviewer: REVIEWERS[rng.random_range(0..REVIEWERS.len())].to_owned(),
                ratings: Ratings::new(rng.random_range(1..=5), rng.random_range(1..=5), rng.random_range(0..=6)),
                decision,
                edited_answer,
                idempotency_key: key.clone(),
            };
            let replay = key.as_ref().and_then(|k| shadow.keys.get(k)).cloned();
            match orch.submit_verdict(verdict.clone(), None) {
                Ok(item) => {
                    if let Some(prev_rid) = replay {
                        stats.replays += 1;
                        if prev_rid != rid || item.verdict.as_ref() != shadow.decided.get(&rid) {
                            stats.violations.push(format!("replay of {rid} changed the outcome"));
                        }
                        continue;
                    }
                    stats.verdicts += 1;
                    if shadow.decided.contains_key(&rid) {
                        stats.violations.push(format!("double decide on {rid}"));
                    }
                    if shadow.merged.contains(&shadow.cycle_of[&rid]) {
                        stats.violations.push(format!("decide after merge on {rid}"));
                    }
                    shadow.decided.insert(rid.clone(), verdict.clone());
                    if let Some(k) = key {
                        shadow.keys.insert(k, rid);
                    }
                }
                Err(e) => {
                    stats.rejected_ops += 1;
                    if let (Some(prev_rid), LoopError::Validation(_)) = (&replay, &e) {
                        if *prev_rid == rid {
                            stats.violations.push(format!("replay of {rid} was refused"));
                        }
                    }
                }
            }
        } else {
            let cid = cycles[rng.random_range(0..cycles.len())].clone();
            let input_len = store.require(orch.cycle(&cid).unwrap().input_dataset).unwrap().len();
            match orch.merge_cycle(&cid) {
                Ok(v) => {
                    stats.merges += 1;
                    if shadow.merged.contains(&cid) {
                        stats.violations.push(format!("double merge of {cid}"));
                    }
                    let items: Vec<&String> = shadow.cycle_of.iter().filter(|(_, c)| **c == cid).map(|(r, _)| r).collect();
                    if items.iter().any(|r| !shadow.decided.contains_key(*r)) {
                        stats.violations.push(format!("merge with pending items in {cid}"));
                    }
                    let kept = items
                        .iter()
                        .filter(|r| matches!(shadow.decided[**r].decision, Decision::Approve | Decision::Edit))
                        .count();
                    if v.len() != input_len + kept {
                        stats.violations.push(format!("merge of {cid} added {} items, expected {kept}", v.len() - input_len));
                    }
                    shadow.merged.insert(cid);
                    head = v.version_id();
                }
                Err(_) => stats.rejected_ops += 1,
            }
        }

        if step % 50 == 0 || step + 1 == ops {
            check_consistency(&orch, &store, &shadow, &mut stats);
        }
    }
    stats
}

fn check_consistency(orch: &Orchestrator, store: &DatasetStore, shadow: &Shadow, stats: &mut Stats) {
    for item in orch.review_queue(None, None) {
        if let Some(v) = shadow.decided.get(&item.review_id) {
            if item.status != ReviewStatus::Decided || item.verdict.as_ref() != Some(v) {
                stats.violations.push(format!("decided item {} regressed to {:?}", item.review_id, item.status));
            }
        } else if item.status == ReviewStatus::Decided {
            stats.violations.push(format!("{} decided without an accepted verdict", item.review_id));
        }
    }
    let merged_cycles: BTreeMap<String, CycleStatus> = orch.cycles().into_iter().map(|c| (c.cycle_id, c.status)).collect();
    for (cid, status) in &merged_cycles {
        if shadow.merged.contains(cid) != (*status != CycleStatus::Open) {
            stats.violations.push(format!("cycle {cid} status {status:?} disagrees with history"));
        }
    }
    for v in store.list() {
        if let Some(p) = v.parent() {
            if store.get(p).unwrap().len() > v.len() {
                stats.violations.push(format!("version {} shrank from its parent", v.version_id()));
            }
        }
        for item in v.items() {
            if item.provenance == Provenance::ExpertValidated {
                let ok = item.source_ref.as_deref().is_some_and(|c| shadow.merged.contains(c));
                if !ok {
                    stats.violations.push(format!("validated item {} has no merged source cycle", item.id));
                }
            }
        }
    }
}
