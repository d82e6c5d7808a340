use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::Json;
use curaloop::corpus::{Benchmark, McqItem, QaItem, TaskCounts, VersionManifest};
use curaloop::evalharness::{render_table, EvalRun, MetricsReport};
use curaloop::infer::InferenceResult;
use curaloop::looporchestrator::{CycleRecord, CycleReport, Decision, Ratings, ReviewItem, ReviewStatus, ReviewVerdict};
use curaloop::workspace::{
    AugmentRequest, AugmentResponse, CycleOpened, CycleRequest, EvalRequest, FinetuneRequest, FinetuneResponse, InferRequest,
    IngestRequest, WorkspaceError,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{paginate, ApiError, ApiJson, ApiQuery, AppState, Page};

type ApiResult<T> = Result<Json<T>, ApiError>;

fn optional_json<T: DeserializeOwned + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| {
        let code = if e.is_data() { "validation_error" } else { "bad_request" };
        ApiError::new(code, format!("invalid request body: {e}"))
    })
}

fn parse_version(raw: &str) -> Result<u64, ApiError> {
    raw.parse()
        .map_err(|_| ApiError::not_found(format!("dataset version {raw:?} does not exist")))
}

#[derive(Debug, Default, Deserialize)]
pub struct PageQuery {
    cursor: Option<String>,
    limit: Option<usize>,
}

pub async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

pub async fn list_datasets(State(s): State<AppState>, ApiQuery(q): ApiQuery<PageQuery>) -> ApiResult<Page<VersionManifest>> {
    let manifests: Vec<VersionManifest> = s.workspace.store.list().iter().map(|v| v.manifest()).collect();
    paginate(manifests, |m| format!("{:020}", m.version_id), q.cursor.as_deref(), q.limit).map(Json)
}

pub async fn ingest_dataset(
    State(s): State<AppState>,
    ApiJson(req): ApiJson<IngestRequest>,
) -> Result<(StatusCode, Json<VersionManifest>), ApiError> {
    let v = s.run(move |ws| ws.curate(&req)).await?;
    Ok((StatusCode::CREATED, Json(v.manifest())))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetBody {
    pub manifest: VersionManifest,
    pub items: Vec<QaItem>,
}

pub async fn get_dataset(State(s): State<AppState>, Path(raw): Path<String>) -> ApiResult<DatasetBody> {
    let id = parse_version(&raw)?;
    let v = s.workspace.store.require(id).map_err(WorkspaceError::from)?;
    Ok(Json(DatasetBody {
        manifest: v.manifest(),
        items: v.items().to_vec(),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub id: String,
    pub item_count: usize,
    pub task_counts: TaskCounts,
}

fn summary(b: &Benchmark) -> BenchmarkSummary {
    BenchmarkSummary {
        id: b.id.clone(),
        item_count: b.items.len(),
        task_counts: b.task_counts(),
    }
}

pub async fn list_benchmarks(State(s): State<AppState>) -> ApiResult<Vec<BenchmarkSummary>> {
    let store = &s.workspace.store;
    let out = store
        .benchmark_ids()
        .iter()
        .filter_map(|id| store.benchmark(id).ok())
        .map(|b| summary(&b))
        .collect();
    Ok(Json(out))
}

pub async fn get_benchmark(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Benchmark> {
    let b = s.workspace.store.benchmark(&id).map_err(WorkspaceError::from)?;
    Ok(Json((*b).clone()))
}

#[derive(Debug, Deserialize)]
pub struct BenchmarkBody {
    pub items: Vec<McqItem>,
}

pub async fn put_benchmark(
    State(s): State<AppState>,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<BenchmarkBody>,
) -> ApiResult<BenchmarkSummary> {
    let b = s
        .run(move |ws| {
            let bench = Benchmark::new(id, body.items)?;
            Ok(ws.store.put_benchmark(bench)?)
        })
        .await?;
    Ok(Json(summary(&b)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub benchmark_id: String,
    pub model: String,
    pub model_ref: Option<String>,
    pub report: MetricsReport,
    pub table: String,
}

fn run_summary(run: &EvalRun) -> RunSummary {
    let label = run.model_ref.clone().unwrap_or_else(|| run.model.clone());
    RunSummary {
        run_id: run.run_id.clone(),
        benchmark_id: run.benchmark_id.clone(),
        model: run.model.clone(),
        model_ref: run.model_ref.clone(),
        table: render_table(&[(label, &run.report)]),
        report: run.report.clone(),
    }
}

pub async fn run_benchmark(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<RunSummary> {
    let req: EvalRequest = optional_json(&body)?;
    let run = s.run(move |ws| ws.evaluate(&id, &req)).await?;
    Ok(Json(run_summary(&run)))
}

pub async fn list_runs(State(s): State<AppState>) -> ApiResult<Vec<RunSummary>> {
    Ok(Json(s.workspace.runs.list().iter().map(|r| run_summary(r)).collect()))
}

pub async fn run_metrics(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<RunSummary> {
    let run = s.workspace.runs.get(&id).map_err(WorkspaceError::from)?;
    Ok(Json(run_summary(&run)))
}

pub async fn augment(State(s): State<AppState>, ApiJson(req): ApiJson<AugmentRequest>) -> ApiResult<AugmentResponse> {
    s.run(move |ws| ws.augment(&req)).await.map(Json)
}

pub async fn finetune(State(s): State<AppState>, body: Bytes) -> ApiResult<FinetuneResponse> {
    let req: FinetuneRequest = optional_json(&body)?;
    s.run(move |ws| ws.finetune(&req)).await.map(Json)
}

pub async fn infer(State(s): State<AppState>, ApiJson(req): ApiJson<InferRequest>) -> ApiResult<InferenceResult> {
    s.run(move |ws| ws.infer(&req)).await.map(Json)
}

pub async fn open_cycle(
    State(s): State<AppState>,
    ApiJson(req): ApiJson<CycleRequest>,
) -> Result<(StatusCode, Json<CycleOpened>), ApiError> {
    let opened = s.run(move |ws| ws.open_cycle(&req)).await?;
    Ok((StatusCode::CREATED, Json(opened)))
}

pub async fn list_cycles(State(s): State<AppState>) -> ApiResult<Vec<CycleRecord>> {
    Ok(Json(s.workspace.orchestrator.cycles()))
}

pub async fn get_cycle(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<CycleRecord> {
    Ok(Json(s.workspace.orchestrator.cycle(&id).map_err(WorkspaceError::from)?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MergeBody {
    pub cycle: CycleRecord,
    pub version: VersionManifest,
}

pub async fn merge_cycle(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<MergeBody> {
    let (cycle, version) = s
        .run(move |ws| {
            let v = ws.orchestrator.merge_cycle(&id)?;
            Ok((ws.orchestrator.cycle(&id)?, v))
        })
        .await?;
    Ok(Json(MergeBody {
        cycle,
        version: version.manifest(),
    }))
}

pub async fn cycle_report(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<CycleReport> {
    Ok(Json(s.workspace.orchestrator.cycle_report(&id).map_err(WorkspaceError::from)?))
}

#[derive(Debug, Default, Deserialize)]
pub struct QueueQuery {
    status: Option<ReviewStatus>,
    cycle_id: Option<String>,
    cursor: Option<String>,
    limit: Option<usize>,
}

pub async fn review_queue(State(s): State<AppState>, ApiQuery(q): ApiQuery<QueueQuery>) -> ApiResult<Page<ReviewItem>> {
    let items = s.workspace.orchestrator.review_queue(q.status, q.cycle_id.as_deref());
    paginate(items, |i| i.review_id.clone(), q.cursor.as_deref(), q.limit).map(Json)
}

pub async fn get_review(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<ReviewItem> {
    Ok(Json(s.workspace.orchestrator.review(&id).map_err(WorkspaceError::from)?))
}

#[derive(Debug, Deserialize)]
pub struct ClaimBody {
    pub reviewer: String,
    #[serde(default)]
    pub expected_version: Option<u64>,
}

pub async fn claim(
    State(s): State<AppState>,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<ClaimBody>,
) -> ApiResult<ReviewItem> {
    s.run(move |ws| Ok(ws.orchestrator.claim(&id, &body.reviewer, body.expected_version)?))
        .await
        .map(Json)
}

#[derive(Debug, Deserialize)]
pub struct VerdictBody {
    pub reviewer: String,
    pub ratings: Ratings,
    pub decision: Decision,
    #[serde(default)]
    pub edited_answer: Option<String>,
    #[serde(default)]
    pub idempotency_key: Option<String>,
    #[serde(default)]
    pub expected_version: Option<u64>,
}

pub async fn verdict(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    ApiJson(body): ApiJson<VerdictBody>,
) -> ApiResult<ReviewItem> {
    let header_key = headers
        .get("idempotency-key")
        .and_then(|v| v.to_str().ok())
        .map(str::to_owned);
    let verdict = ReviewVerdict {
        review_id: id,
        reviewer: body.reviewer,
        ratings: body.ratings,
        decision: body.decision,
        edited_answer: body.edited_answer,
        idempotency_key: body.idempotency_key.or(header_key),
    };
    let expected = body.expected_version;
    s.run(move |ws| Ok(ws.orchestrator.submit_verdict(verdict, expected)?))
        .await
        .map(Json)
}
