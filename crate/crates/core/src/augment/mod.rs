//! Balanced synthetic QA generation from a seed corpus.
//!
//! [`run_augmentation`] drives generate → parse → filter rounds per task until
//! the [`QuotaPlan`] is met or the call budget runs out. Calls inside a round
//! may run in parallel; their outputs are filtered in call order behind a
//! single accumulator, so results do not depend on completion order.

mod filter;
mod leakage;
mod parse;

use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use filter::{
    filter_candidates, CandidateFilter, FilterReport, FilterRules, DEFAULT_NEAR_DUPLICATE_THRESHOLD,
    RULE_BANNED, RULE_DUPLICATE, RULE_LENGTH, RULE_OVER_QUOTA, RULE_TASK_KEYWORD,
};
pub use leakage::{leakage_check, LeakageHit};
pub use parse::{parse_generation, Candidate, ParseOutcome, ITEM_CLOSE, ITEM_OPEN};

use crate::backend::{BackendError, GeneratorBackend};
use crate::corpus::{CorpusError, DatasetStore, DatasetVersion, Provenance, QaItem, TaskLabel};
use crate::infer::SamplingParams;
use crate::prompt::{neutralize_tags, TASK_TAG};

pub const VIGNETTE_TEMPLATE: &str = "vignette.v1";
pub const SCHEMA_MARKER: &str = "OUTPUT-SCHEMA: qa-block.v1";

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("quota plan needs at least one task")]
    EmptyTaskSet,
    #[error("quota plan is unbalanced: {0}")]
    UnbalancedPlan(String),
    #[error("unknown prompt template {0:?}")]
    UnknownTemplate(String),
    #[error("seed corpus is empty")]
    EmptySeed,
    #[error("invalid augmentation options: {0}")]
    InvalidOptions(String),
    #[error("call budget exhausted after {} calls with {} of {} items accepted", .0.calls, .0.items.len(), .0.requested)]
    BudgetExhausted(Box<PartialAugmentation>),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// What had been accepted when the budget ran out. Nothing is persisted.
#[derive(Debug, Clone)]
pub struct PartialAugmentation {
    pub items: Vec<QaItem>,
    pub report: FilterReport,
    pub calls: usize,
    pub requested: usize,
    pub diagnostics: Vec<String>,
}

/// Per-task generation targets, in generation order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "IndexMap<TaskLabel, usize>", into = "IndexMap<TaskLabel, usize>")]
pub struct QuotaPlan {
    counts: IndexMap<TaskLabel, usize>,
}

impl QuotaPlan {
    /// An explicit plan. Counts over the listed tasks must differ by at most one.
    pub fn from_counts(counts: impl IntoIterator<Item = (TaskLabel, usize)>) -> Result<Self, AugmentError> {
        let counts: IndexMap<TaskLabel, usize> = counts.into_iter().collect();
        if counts.is_empty() {
            return Err(AugmentError::EmptyTaskSet);
        }
        let max = counts.values().max().copied().unwrap_or(0);
        let min = counts.values().min().copied().unwrap_or(0);
        if max - min > 1 {
            return Err(AugmentError::UnbalancedPlan(format!("counts range from {min} to {max}")));
        }
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &IndexMap<TaskLabel, usize> {
        &self.counts
    }

    pub fn get(&self, task: TaskLabel) -> usize {
        self.counts.get(&task).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn tasks(&self) -> impl Iterator<Item = TaskLabel> + '_ {
        self.counts.keys().copied()
    }
}

impl TryFrom<IndexMap<TaskLabel, usize>> for QuotaPlan {
    type Error = AugmentError;

    fn try_from(counts: IndexMap<TaskLabel, usize>) -> Result<Self, Self::Error> {
        Self::from_counts(counts)
    }
}

impl From<QuotaPlan> for IndexMap<TaskLabel, usize> {
    fn from(plan: QuotaPlan) -> Self {
        plan.counts
    }
}

/// Splits `total` evenly over `tasks`; the remainder goes one each to the
/// earliest tasks. Repeated tasks are ignored after their first occurrence.
pub fn plan_quota(total: usize, tasks: &[TaskLabel]) -> Result<QuotaPlan, AugmentError> {
    let mut order: Vec<TaskLabel> = Vec::with_capacity(tasks.len());
    for t in tasks {
        if !order.contains(t) {
            order.push(*t);
        }
    }
    if order.is_empty() {
        return Err(AugmentError::EmptyTaskSet);
    }
    let base = total / order.len();
    let remainder = total % order.len();
    Ok(QuotaPlan {
        counts: order
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t, base + usize::from(i < remainder)))
            .collect(),
    })
}

/// Template ids accepted by [`render_prompt`].
pub fn templates() -> &'static [&'static str] {
    &[VIGNETTE_TEMPLATE]
}

fn task_instruction(task: TaskLabel) -> &'static str {
    match task {
        TaskLabel::Diagnosis => {
            "Write a patient question describing sweating symptoms, onset and triggers, and an answer that \
             reasons toward a diagnosis: primary versus secondary hyperhidrosis, likely causes and useful tests."
        }
        TaskLabel::Treatment => {
            "Write a patient question asking how to manage their sweating, and an answer recommending \
             evidence-based treatment options in a sensible order, from topical antiperspirants to procedures."
        }
        TaskLabel::Counseling => {
            "Write a patient question expressing the emotional or social burden of sweating, and an answer \
             offering empathetic psychological support and practical coping strategies."
        }
    }
}

fn one_line(s: &str) -> String {
    neutralize_tags(&s.split_whitespace().collect::<Vec<_>>().join(" "))
}

/// Renders a generation prompt: task tag, instruction, the seed pairs as
/// worked examples, and the required output schema.
pub fn render_prompt(template_id: &str, seed_items: &[QaItem], task: TaskLabel) -> Result<String, AugmentError> {
    if template_id != VIGNETTE_TEMPLATE {
        return Err(AugmentError::UnknownTemplate(template_id.to_owned()));
    }
    if seed_items.is_empty() {
        return Err(AugmentError::EmptySeed);
    }
    let mut out = String::new();
    out.push_str(
        "You are generating synthetic patient vignettes about hyperhidrosis for supervised fine-tuning.\n",
    );
    out.push_str(&format!("{TASK_TAG} {task}\n"));
    out.push_str(&format!("Instruction: {}\n", task_instruction(task)));
    out.push_str("Examples:\n");
    for item in seed_items {
        out.push_str(&format!(
            "{ITEM_OPEN}\nQ: {}\nA: {}\n{ITEM_CLOSE}\n",
            one_line(&item.query),
            one_line(&item.answer)
        ));
    }
    out.push_str(
        "Write new vignettes that are medically plausible and clearly different from the examples. \
         Return each one exactly in this format:\n",
    );
    out.push_str(&format!("{ITEM_OPEN}\nQ: <patient question>\nA: <answer>\n{ITEM_CLOSE}\n"));
    out.push_str(SCHEMA_MARKER);
    out.push('\n');
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct AugmentOptions {
    pub template_id: String,
    pub rules: FilterRules,
    pub sampling: SamplingParams,
    /// Base seed; call `n` samples with `seed + n`.
    pub seed: u64,
    /// Maximum concurrent generation calls.
    pub parallelism: usize,
    /// Seed exemplars shown per prompt.
    pub exemplars: usize,
    /// Publish `seed ++ generated` as a child of the seed instead of a root
    /// version holding only the generated items.
    pub carry_seed: bool,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        Self {
            template_id: VIGNETTE_TEMPLATE.to_owned(),
            rules: FilterRules::default(),
            sampling: SamplingParams::default(),
            seed: 0,
            parallelism: 1,
            exemplars: 3,
            carry_seed: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AugmentOutcome {
    pub version: Arc<DatasetVersion>,
    pub report: FilterReport,
    pub calls: usize,
    pub diagnostics: Vec<String>,
}

// Exemplars for call `n`: a rotating window over the seed items of `task`,
// or over the whole seed when it has none of that task.
fn exemplars_for(seed: &DatasetVersion, task: TaskLabel, call: usize, k: usize) -> Vec<QaItem> {
    let same: Vec<&QaItem> = seed.items().iter().filter(|i| i.task == task).collect();
    let pool: Vec<&QaItem> = if same.is_empty() { seed.items().iter().collect() } else { same };
    let k = k.clamp(1, pool.len());
    (0..k).map(|j| pool[(call * k + j) % pool.len()].clone()).collect()
}

pub fn run_augmentation(
    store: &DatasetStore,
    seed: &DatasetVersion,
    backend: &dyn GeneratorBackend,
    plan: &QuotaPlan,
    budget: usize,
    options: &AugmentOptions,
) -> Result<AugmentOutcome, AugmentError> {
    if seed.is_empty() {
        return Err(AugmentError::EmptySeed);
    }
    if !templates().contains(&options.template_id.as_str()) {
        return Err(AugmentError::UnknownTemplate(options.template_id.clone()));
    }
    options.sampling.validate().map_err(AugmentError::InvalidOptions)?;
    let parallelism = options.parallelism.max(1);
    let source_ref = format!("generator:{}", backend.identity());

    let mut remaining: IndexMap<TaskLabel, usize> = plan.counts().clone();
    let mut filter = CandidateFilter::new(&options.rules, seed.items());
    let mut report = FilterReport::default();
    let mut accepted: Vec<QaItem> = Vec::new();
    let mut diagnostics = Vec::new();
    let mut calls = 0usize;
    let mut cursor = 0usize;

    while remaining.values().any(|n| *n > 0) && calls < budget {
        // Assign this round's calls round-robin over unmet tasks, never more
        // calls to a task than it still needs.
        let slots = parallelism.min(budget - calls);
        let mut assigned: IndexMap<TaskLabel, usize> = IndexMap::new();
        let mut round: Vec<(usize, TaskLabel)> = Vec::with_capacity(slots);
        let mut idle = 0;
        while round.len() < slots && idle < remaining.len() {
            let (task, need) = remaining.get_index(cursor % remaining.len()).expect("non-empty plan");
            cursor += 1;
            let used = assigned.entry(*task).or_default();
            if *used < *need {
                *used += 1;
                round.push((calls + round.len(), *task));
                idle = 0;
            } else {
                idle += 1;
            }
        }

        let prompts: Vec<(usize, TaskLabel, String)> = round
            .iter()
            .map(|(n, task)| {
                let ex = exemplars_for(seed, *task, *n, options.exemplars);
                render_prompt(&options.template_id, &ex, *task).map(|p| (*n, *task, p))
            })
            .collect::<Result<_, _>>()?;
        let outputs = dispatch(backend, &prompts, &options.sampling, options.seed);
        calls += prompts.len();

        for ((n, task, _), output) in prompts.iter().zip(outputs) {
            let raw = match output {
                Ok(raw) => raw,
                Err(e) => {
                    diagnostics.push(format!("call {n} ({task}): {e}"));
                    continue;
                }
            };
            let parsed = parse_generation(&raw);
            diagnostics.extend(parsed.diagnostics.into_iter().map(|d| format!("call {n}: {d}")));
            for mut cand in parsed.candidates {
                cand.task = Some(*task);
                let need = remaining.get_mut(task).expect("task in plan");
                if *need == 0 {
                    report.reject(RULE_OVER_QUOTA);
                    continue;
                }
                if let Some(rule) = filter.check(&cand) {
                    report.reject(rule);
                    continue;
                }
                filter.admit(&cand);
                report.accept();
                *need -= 1;
                accepted.push(QaItem {
                    id: store.ids().next_id(),
                    query: cand.query,
                    answer: cand.answer,
                    task: *task,
                    provenance: Provenance::Synthetic,
                    source_ref: Some(source_ref.clone()),
                    created_at: store.ids().now(),
                });
            }
        }
    }

    if remaining.values().any(|n| *n > 0) {
        return Err(AugmentError::BudgetExhausted(Box::new(PartialAugmentation {
            items: accepted,
            report,
            calls,
            requested: plan.total(),
            diagnostics,
        })));
    }
    let version = if options.carry_seed {
        store.extend_version(seed, accepted)?
    } else {
        store.publish_items(accepted)?
    };
    tracing::info!(
        version = version.version_id(),
        calls,
        accepted = report.accepted,
        generated = report.generated,
        "augmentation complete"
    );
    Ok(AugmentOutcome {
        version,
        report,
        calls,
        diagnostics,
    })
}

fn dispatch(
    backend: &dyn GeneratorBackend,
    prompts: &[(usize, TaskLabel, String)],
    sampling: &SamplingParams,
    base_seed: u64,
) -> Vec<Result<String, BackendError>> {
    let params = |n: usize| sampling.with_seed(base_seed.wrapping_add(n as u64));
    if prompts.len() <= 1 {
        return prompts
            .iter()
            .map(|(n, _, p)| backend.generate(p, &params(*n)))
            .collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = prompts
            .iter()
            .map(|(n, _, p)| {
                let sp = params(*n);
                s.spawn(move || backend.generate(p, &sp))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(BackendError::Failed("generation thread panicked".into()))))
            .collect()
    })
}
