//! One handle over a store directory: datasets, cycles, artifacts, runs and
//! the configured backends. The CLI and the HTTP service both drive the
//! pipeline through these operations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{plan_quota, run_augmentation, AugmentError, AugmentOptions, FilterReport, QuotaPlan};
use crate::backend::TextBackend;
use crate::corpus::{Benchmark, CorpusError, DatasetStore, DatasetVersion, Provenance, RawRecord, TaskLabel, VersionManifest};
use crate::evalharness::{run_benchmark, EvalError, EvalOptions, EvalRun, RunStore};
use crate::finetune::{
    export_sft, grid_configs, run_training, select_best, AdapterArtifact, ArtifactRegistry, FinetuneError, RunConfig,
    SearchGrid, TrainerBackend,
};
use crate::ids::IdGenerator;
use crate::infer::{answer_query, InferError, InferenceResult, KeywordRuleset, SamplingParams};
use crate::looporchestrator::{CycleRecord, LoopError, OpenCycleRequest, Orchestrator, ReviewItem};
use crate::prompt::QA_TEMPLATE;
use crate::settings::{BackendRole, Settings, SettingsError};

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Finetune(#[from] FinetuneError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error(transparent)]
    Settings(#[from] SettingsError),
    #[error("{0}")]
    Invalid(String),
}

impl WorkspaceError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        use WorkspaceError as W;
        match self {
            W::Corpus(CorpusError::UnknownVersion(_) | CorpusError::UnknownBenchmark(_))
            | W::Loop(LoopError::UnknownCycle(_) | LoopError::UnknownReview(_))
            | W::Finetune(FinetuneError::UnknownArtifact(_))
            | W::Eval(EvalError::UnknownRun(_)) => "not_found",
            W::Loop(LoopError::Corpus(CorpusError::UnknownVersion(_))) => "not_found",
            W::Corpus(CorpusError::DuplicateId(_)) => "duplicate_id",
            W::Loop(LoopError::AlreadyDecided(_)) => "already_decided",
            W::Loop(LoopError::ClaimConflict { .. }) => "claim_conflict",
            W::Loop(LoopError::VersionConflict { .. }) => "version_conflict",
            W::Loop(LoopError::AlreadyMerged(_)) => "already_merged",
            W::Loop(LoopError::NotMerged(_)) => "not_merged",
            W::Loop(LoopError::PendingItems { .. }) => "pending_items",
            W::Loop(LoopError::QuotaUnsatisfiable { .. }) => "quota_unsatisfiable",
            W::Augment(AugmentError::BudgetExhausted(_)) => "budget_exhausted",
            W::Finetune(FinetuneError::DuplicateArtifact(_)) => "duplicate_artifact",
            W::Infer(InferError::Backend { .. })
            | W::Loop(LoopError::Infer(InferError::Backend { .. }))
            | W::Finetune(FinetuneError::Backend(_)) => "backend_error",
            W::Corpus(CorpusError::Io { .. })
            | W::Finetune(FinetuneError::Io { .. })
            | W::Eval(EvalError::Io { .. })
            | W::Loop(LoopError::Io { .. })
            | W::Settings(_) => "internal_error",
            _ => "validation_error",
        }
    }

    /// Structured details for selected errors.
    pub fn details(&self) -> Option<serde_json::Value> {
        match self {
            WorkspaceError::Loop(LoopError::PendingItems { pending, .. }) => {
                Some(serde_json::json!({ "pending": pending }))
            }
            WorkspaceError::Augment(AugmentError::BudgetExhausted(p)) => Some(serde_json::json!({
                "calls": p.calls,
                "accepted": p.items.len(),
                "requested": p.requested,
                "report": p.report,
            })),
            WorkspaceError::Loop(LoopError::QuotaUnsatisfiable {
                task,
                requested,
                available,
            }) => Some(serde_json::json!({ "task": task, "requested": requested, "available": available })),
            _ => None,
        }
    }
}

pub type Result<T, E = WorkspaceError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestRequest {
    pub records: Vec<RawRecord>,
    #[serde(default = "default_provenance")]
    pub provenance: Provenance,
}

fn default_provenance() -> Provenance {
    Provenance::Real
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentRequest {
    /// Seed version; the latest version when absent.
    pub seed_version: Option<u64>,
    /// Total items, split evenly over `tasks`. Ignored when `quota` is set.
    pub total: Option<usize>,
    /// Defaults to diagnosis and treatment.
    pub tasks: Option<Vec<TaskLabel>>,
    pub quota: Option<QuotaPlan>,
    /// Maximum generator calls; four per requested item when absent.
    pub budget: Option<usize>,
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
    pub carry_seed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentResponse {
    pub version: VersionManifest,
    pub report: FilterReport,
    pub calls: usize,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneRequest {
    /// Latest version when absent.
    pub dataset_version: Option<u64>,
    /// Single run overrides; the configured grid is searched when neither is set.
    pub learning_rate: Option<f64>,
    pub epochs: Option<u32>,
    pub grid: Option<SearchGrid>,
    /// Benchmark used to pick the best grid run.
    pub benchmark: Option<String>,
    pub resume_from: Option<String>,
    pub seed: Option<u64>,
    /// Cycle to mark as trained with the selected artifact.
    pub cycle_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneResponse {
    pub records: usize,
    pub artifacts: Vec<AdapterArtifact>,
    /// (artifact id, overall accuracy) when a benchmark was given.
    pub scores: Vec<(String, f64)>,
    pub selected: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferRequest {
    pub query: String,
    #[serde(default)]
    pub sampling: Option<SamplingParams>,
    #[serde(default)]
    pub model_ref: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalRequest {
    pub sampling: Option<SamplingParams>,
    pub greedy: bool,
    pub model_ref: Option<String>,
    pub parallelism: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleRequest {
    /// Latest version when absent.
    #[serde(default)]
    pub dataset: Option<u64>,
    pub queries: Vec<String>,
    #[serde(default)]
    pub quota: Option<BTreeMap<TaskLabel, usize>>,
    #[serde(default)]
    pub sampling: Option<SamplingParams>,
    #[serde(default)]
    pub model_ref: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleOpened {
    pub cycle: CycleRecord,
    pub items: Vec<ReviewItem>,
}

pub struct Workspace {
    pub settings: Settings,
    pub ids: Arc<IdGenerator>,
    pub store: Arc<DatasetStore>,
    pub orchestrator: Orchestrator,
    pub artifacts: ArtifactRegistry,
    pub runs: RunStore,
    pub rules: Arc<KeywordRuleset>,
    pub generator: Arc<dyn TextBackend>,
    pub model: Arc<dyn TextBackend>,
    pub trainer: Arc<dyn TrainerBackend>,
}

impl Workspace {
    /// Opens (or creates) a store directory; `None` keeps everything in memory.
    /// A seed makes ids, timestamps and sampling seeds reproducible.
    pub fn open(root: Option<&Path>, settings: Settings, seed: Option<u64>) -> Result<Self> {
        let ids = Arc::new(seed.map_or_else(IdGenerator::system, IdGenerator::seeded));
        let store = Arc::new(match root {
            Some(r) => DatasetStore::open(r, ids.clone())?,
            None => DatasetStore::in_memory(ids.clone()),
        });
        let (artifacts, runs) = match root {
            Some(r) => (ArtifactRegistry::open(r)?, RunStore::open(r)?),
            None => (ArtifactRegistry::in_memory(), RunStore::in_memory()),
        };
        let trainer_root = root.map_or_else(std::env::temp_dir, Path::to_path_buf);
        let orchestrator = Orchestrator::new(store.clone())?;
        let latest = store
            .list()
            .iter()
            .map(|v| v.created_at())
            .chain(orchestrator.cycles().iter().map(|c| c.created_at))
            .chain(orchestrator.review_queue(None, None).iter().filter_map(|i| i.decided_at))
            .chain(runs.list().iter().map(|r| r.created_at))
            .max();
        if let Some(t) = latest {
            ids.advance_past(t);
        }
        Ok(Self {
            orchestrator,
            rules: Arc::new(settings.router()?),
            generator: settings.generator.build(BackendRole::Generator, &settings.base_dir)?,
            model: settings.model.build(BackendRole::Model, &settings.base_dir)?,
            trainer: settings.trainer.build(&trainer_root),
            settings,
            ids,
            store,
            artifacts,
            runs,
        })
    }

    pub fn root(&self) -> Option<PathBuf> {
        self.store.root().map(Path::to_path_buf)
    }

    fn version_or_latest(&self, v: Option<u64>) -> Result<Arc<DatasetVersion>> {
        match v {
            Some(id) => Ok(self.store.require(id)?),
            None => self
                .store
                .latest()
                .ok_or_else(|| WorkspaceError::Invalid("the store has no dataset versions".into())),
        }
    }

    fn seeded(&self, sampling: Option<SamplingParams>) -> SamplingParams {
        let mut s = sampling.unwrap_or_default();
        if s.seed.is_none() {
            s.seed = Some(self.ids.next_u64());
        }
        s
    }

    pub fn curate(&self, req: &IngestRequest) -> Result<Arc<DatasetVersion>> {
        Ok(self.store.ingest_items(&req.records, req.provenance)?)
    }

    pub fn put_benchmark(&self, id: &str, jsonl: &str) -> Result<Arc<Benchmark>> {
        Ok(self.store.put_benchmark(Benchmark::from_jsonl(id, jsonl)?)?)
    }

    pub fn augment(&self, req: &AugmentRequest) -> Result<AugmentResponse> {
        let seed_version = self.version_or_latest(req.seed_version)?;
        let plan = match (&req.quota, req.total) {
            (Some(p), _) => p.clone(),
            (None, Some(total)) => {
                let tasks = req
                    .tasks
                    .clone()
                    .unwrap_or_else(|| vec![TaskLabel::Diagnosis, TaskLabel::Treatment]);
                plan_quota(total, &tasks)?
            }
            (None, None) => return Err(WorkspaceError::Invalid("augment needs `total` or `quota`".into())),
        };
        let options = AugmentOptions {
            seed: req.seed.unwrap_or_else(|| self.ids.next_u64()),
            parallelism: req.parallelism.unwrap_or(1),
            carry_seed: req.carry_seed,
            ..AugmentOptions::default()
        };
        let budget = req.budget.unwrap_or(4 * plan.total().max(1));
        let out = run_augmentation(&self.store, &seed_version, self.generator.as_ref(), &plan, budget, &options)?;
        Ok(AugmentResponse {
            version: out.version.manifest(),
            report: out.report,
            calls: out.calls,
            diagnostics: out.diagnostics,
        })
    }

    pub fn finetune(&self, req: &FinetuneRequest) -> Result<FinetuneResponse> {
        let version = self.version_or_latest(req.dataset_version)?;
        let records = export_sft(&version, QA_TEMPLATE)?;
        let fs = &self.settings.finetune;
        let seed = req.seed.unwrap_or_else(|| self.ids.next_u64());
        let grid = match (req.learning_rate, req.epochs, &req.grid) {
            (None, None, Some(g)) => g.clone(),
            (None, None, None) => fs.grid.clone(),
            (lr, ep, _) => SearchGrid {
                learning_rates: vec![lr.unwrap_or(2e-4)],
                epochs: vec![ep.unwrap_or(3)],
            },
        };
        let mut configs = grid_configs(&fs.base_model, &grid, fs.adapter, version.version_id(), seed)?;
        for c in &mut configs {
            c.resume_from.clone_from(&req.resume_from);
        }

        let mut artifacts = Vec::with_capacity(configs.len());
        for cfg in &configs {
            let artifact = run_training(&records, cfg, self.trainer.as_ref())?;
            artifacts.push((*self.artifacts.register(artifact)?).clone());
        }

        let mut scores = Vec::new();
        let selected = match &req.benchmark {
            Some(bench_id) if artifacts.len() > 1 => {
                let bench = self.store.benchmark(bench_id)?;
                let mut scored: Vec<(RunConfig, f64)> = Vec::new();
                for a in &artifacts {
                    let opts = EvalOptions {
                        sampling: SamplingParams::default().with_seed(seed),
                        model_ref: Some(a.artifact_id.clone()),
                        ..EvalOptions::default()
                    };
                    let run = self.runs.save(run_benchmark(&bench, self.model.as_ref(), &opts, &self.ids)?)?;
                    scores.push((a.artifact_id.clone(), run.report.overall.accuracy));
                    scored.push((a.run_config.clone(), run.report.overall.accuracy));
                }
                let (best, _) = select_best(&scored).expect("non-empty grid");
                artifacts
                    .iter()
                    .find(|a| a.run_config == *best)
                    .expect("best config has an artifact")
                    .artifact_id
                    .clone()
            }
            _ => {
                let scored: Vec<(RunConfig, f64)> = artifacts.iter().map(|a| (a.run_config.clone(), 0.0)).collect();
                let (best, _) = select_best(&scored).expect("non-empty grid");
                artifacts.iter().find(|a| a.run_config == *best).expect("artifact").artifact_id.clone()
            }
        };
        if let Some(cycle_id) = &req.cycle_id {
            self.orchestrator.mark_trained(cycle_id, &selected)?;
        }
        Ok(FinetuneResponse {
            records: records.len(),
            artifacts,
            scores,
            selected,
        })
    }

    pub fn infer(&self, req: &InferRequest) -> Result<InferenceResult> {
        let sampling = self.seeded(req.sampling.clone());
        Ok(answer_query(
            &req.query,
            &self.rules,
            self.model.as_ref(),
            sampling,
            req.model_ref.as_deref(),
            &self.ids,
        )?)
    }

    pub fn evaluate(&self, benchmark_id: &str, req: &EvalRequest) -> Result<Arc<EvalRun>> {
        let bench = self.store.benchmark(benchmark_id)?;
        let base = if req.greedy {
            Some(SamplingParams::greedy())
        } else {
            req.sampling.clone()
        };
        let opts = EvalOptions {
            sampling: self.seeded(base),
            parallelism: req.parallelism.unwrap_or(4),
            model_ref: req.model_ref.clone(),
        };
        let run = run_benchmark(&bench, self.model.as_ref(), &opts, &self.ids)?;
        Ok(self.runs.save(run)?)
    }

    pub fn open_cycle(&self, req: &CycleRequest) -> Result<CycleOpened> {
        let dataset = self.version_or_latest(req.dataset)?.version_id();
        let (cycle, items) = self.orchestrator.open_cycle(OpenCycleRequest {
            dataset,
            queries: &req.queries,
            backend: self.model.as_ref(),
            rules: &self.rules,
            quota: req.quota.as_ref(),
            sampling: self.seeded(req.sampling.clone()),
            model_ref: req.model_ref.as_deref(),
        })?;
        Ok(CycleOpened { cycle, items })
    }
}
