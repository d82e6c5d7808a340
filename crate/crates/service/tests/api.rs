use std::sync::Arc;

use curaloop::corpus::{Provenance, RawRecord, TaskLabel};
use curaloop::looporchestrator::{CycleReport, Decision, Ratings, ReviewItem, ReviewStatus, ReviewVerdict};
use curaloop::settings::Settings;
use curaloop::workspace::{AugmentRequest, CycleRequest, IngestRequest, Workspace};
use curaloop_service::{serve, ApiError, AppState, ServiceHandle};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use tokio::runtime::Runtime;
use ureq::Agent;

const SEED: u64 = 11;

fn seed_records() -> Vec<RawRecord> {
    [
        ("Why do my palms drip during exams? Is this a medical condition?", "This pattern suggests primary focal hyperhidrosis.", TaskLabel::Diagnosis),
        ("Could my night sweats be a symptom of something?", "Night sweats can have a secondary cause; see a doctor.", TaskLabel::Diagnosis),
        ("Is sweating only on my feet a sign of a disorder?", "Isolated plantar sweating is usually primary hyperhidrosis.", TaskLabel::Diagnosis),
        ("Which antiperspirant should I try for my underarms?", "Start with an aluminium chloride antiperspirant at night.", TaskLabel::Treatment),
        ("Is botox an option for sweaty hands?", "Botulinum toxin injections are a common treatment option.", TaskLabel::Treatment),
        ("Does iontophoresis work for sweaty feet?", "Tap-water iontophoresis helps many people with plantar sweating.", TaskLabel::Treatment),
    ]
    .iter()
    .map(|(q, a, t)| RawRecord::new(q, a, *t))
    .collect()
}

fn queries() -> Vec<String> {
    [
        "Why do my hands sweat so much, is it a condition?",
        "What treatment can stop my armpits sweating?",
        "Is my face sweating a symptom of a disease?",
        "Which cream helps with sweaty feet?",
    ]
    .map(String::from)
    .to_vec()
}

struct Server {
    rt: Runtime,
    handle: Option<ServiceHandle>,
    ws: Arc<Workspace>,
    base: String,
    agent: Agent,
}

impl Server {
    fn start(token: Option<&str>) -> Self {
        let ws = Arc::new(Workspace::open(None, Settings::default(), Some(SEED)).unwrap());
        let rt = Runtime::new().unwrap();
        let handle = rt
            .block_on(serve(AppState::new(ws.clone(), token.map(str::to_owned)), "127.0.0.1:0"))
            .unwrap();
        let base = handle.url();
        let agent: Agent = Agent::config_builder().http_status_as_error(false).build().into();
        Self {
            rt,
            handle: Some(handle),
            ws,
            base,
            agent,
        }
    }

    fn get(&self, path: &str) -> (u16, Value) {
        let mut r = self.agent.get(format!("{}{path}", self.base)).call().unwrap();
        (r.status().as_u16(), r.body_mut().read_json().unwrap())
    }

    fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        let mut r = self.agent.post(format!("{}{path}", self.base)).send_json(body).unwrap();
        (r.status().as_u16(), r.body_mut().read_json().unwrap())
    }

    fn ok<T: DeserializeOwned>(&self, (status, body): (u16, Value)) -> T {
        assert!((200..300).contains(&status), "status {status}: {body}");
        serde_json::from_value(body).unwrap()
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(h) = self.handle.take() {
            self.rt.block_on(h.shutdown()).unwrap();
        }
    }
}

fn assert_api_error(status: u16, body: &Value, code: &str) {
    assert!(status >= 400, "expected an error status, got {status}");
    let e: ApiError = serde_json::from_value(body.clone()).expect("error body is an ApiError");
    assert_eq!(e.code, code, "{body}");
    assert!(!e.message.is_empty());
}

fn ingest(s: &Server) -> Value {
    s.ok(s.post("/datasets", &json!({ "records": seed_records() })))
}

fn verdict_body(reviewer: &str, decision: &str, edited: Option<&str>, key: Option<&str>) -> Value {
    json!({
        "reviewer": reviewer,
        "ratings": {"accuracy": 5, "appropriateness": 4, "empathy": 4},
        "decision": decision,
        "edited_answer": edited,
        "idempotency_key": key,
    })
}

#[test]
fn health_is_ok() {
    let s = Server::start(None);
    let (status, body) = s.get("/health");
    assert_eq!(status, 200);
    assert_eq!(body["status"], "ok");
}

#[test]
fn dataset_listing_after_one_ingest() {
    let s = Server::start(None);
    let manifest = ingest(&s);
    assert_eq!(manifest["item_count"], 6);
    let (status, page) = s.get("/datasets");
    assert_eq!(status, 200);
    assert_eq!(page["items"].as_array().unwrap().len(), 1);
    assert!(page["next_cursor"].is_null());
    let (status, detail) = s.get("/datasets/1");
    assert_eq!(status, 200);
    assert_eq!(detail["items"].as_array().unwrap().len(), 6);
}

#[test]
fn verdict_on_decided_item_conflicts() {
    let s = Server::start(None);
    ingest(&s);
    let opened: Value = s.ok(s.post("/cycles", &json!({ "queries": queries() })));
    let rid = opened["items"][0]["review_id"].as_str().unwrap().to_owned();
    let _: ReviewItem = s.ok(s.post(&format!("/review/{rid}/verdict"), &verdict_body("dr-a", "approve", None, None)));
    let (status, body) = s.post(&format!("/review/{rid}/verdict"), &verdict_body("dr-b", "reject", None, None));
    assert_eq!(status, 409);
    assert_api_error(status, &body, "already_decided");
}

#[test]
fn verdict_retry_with_idempotency_key() {
    let s = Server::start(None);
    ingest(&s);
    let opened: Value = s.ok(s.post("/cycles", &json!({ "queries": queries() })));
    let rid = opened["items"][1]["review_id"].as_str().unwrap().to_owned();
    let path = format!("/review/{rid}/verdict");
    let body = verdict_body("dr-a", "edit", Some("Try a clinical-strength antiperspirant first."), Some("k-1"));
    let first: ReviewItem = s.ok(s.post(&path, &body));
    let second: ReviewItem = s.ok(s.post(&path, &body));
    assert_eq!(first, second);

    // The header form is equivalent to the body field.
    let rid2 = opened["items"][2]["review_id"].as_str().unwrap().to_owned();
    let path2 = format!("/review/{rid2}/verdict");
    let send = || {
        let mut r = s
            .agent
            .post(format!("{}{path2}", s.base))
            .header("Idempotency-Key", "k-2")
            .send_json(verdict_body("dr-a", "approve", None, None))
            .unwrap();
        (r.status().as_u16(), r.body_mut().read_json::<Value>().unwrap())
    };
    let (a, b) = (send(), send());
    assert_eq!((a.0, b.0), (200, 200));
    assert_eq!(a.1, b.1);

    let log_lines = s.ws.orchestrator.review_queue(Some(ReviewStatus::Decided), None).len();
    assert_eq!(log_lines, 2);
}

#[test]
fn edit_without_text_is_a_validation_error() {
    let s = Server::start(None);
    ingest(&s);
    let opened: Value = s.ok(s.post("/cycles", &json!({ "queries": queries() })));
    let rid = opened["items"][0]["review_id"].as_str().unwrap().to_owned();
    let (status, body) = s.post(&format!("/review/{rid}/verdict"), &verdict_body("dr-a", "edit", Some(""), None));
    assert_eq!(status, 422);
    assert_api_error(status, &body, "validation_error");
}

#[test]
fn claim_conflict_and_merge_guard() {
    let s = Server::start(None);
    ingest(&s);
    let opened: Value = s.ok(s.post("/cycles", &json!({ "queries": queries() })));
    let cycle_id = opened["cycle"]["cycle_id"].as_str().unwrap().to_owned();
    let rid = opened["items"][0]["review_id"].as_str().unwrap().to_owned();

    let _: ReviewItem = s.ok(s.post(&format!("/review/{rid}/claim"), &json!({"reviewer": "dr-a"})));
    let (status, body) = s.post(&format!("/review/{rid}/claim"), &json!({"reviewer": "dr-b"}));
    assert_eq!(status, 409);
    assert_api_error(status, &body, "claim_conflict");

    let (status, body) = s.post(&format!("/cycles/{cycle_id}/merge"), &json!({}));
    assert_eq!(status, 409);
    assert_api_error(status, &body, "pending_items");
    assert_eq!(body["details"]["pending"].as_array().unwrap().len(), 4);
}

#[test]
fn review_queue_pages_by_cursor() {
    let s = Server::start(None);
    ingest(&s);
    let _: Value = s.ok(s.post("/cycles", &json!({ "queries": queries() })));
    let mut seen = Vec::new();
    let mut cursor: Option<String> = None;
    loop {
        let path = match &cursor {
            Some(c) => format!("/review/queue?status=pending&limit=3&cursor={c}"),
            None => "/review/queue?status=pending&limit=3".to_owned(),
        };
        let (status, page) = s.get(&path);
        assert_eq!(status, 200);
        for it in page["items"].as_array().unwrap() {
            seen.push(it["review_id"].as_str().unwrap().to_owned());
        }
        match page["next_cursor"].as_str() {
            Some(c) => cursor = Some(c.to_owned()),
            None => break,
        }
    }
    let mut sorted = seen.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(seen.len(), 4);
    assert_eq!(sorted, seen);
}

#[test]
fn every_error_body_is_an_api_error() {
    let s = Server::start(None);
    let cases: Vec<(u16, Value, &str)> = vec![
        {
            let (st, b) = s.get("/datasets/99");
            (st, b, "not_found")
        },
        {
            let (st, b) = s.get("/no/such/route");
            (st, b, "not_found")
        },
        {
            let (st, b) = s.post("/infer", &json!({"sampling": null}));
            (st, b, "validation_error")
        },
        {
            let (st, b) = s.post("/augment", &json!({"total": 4}));
            (st, b, "validation_error")
        },
        {
            let (st, b) = s.get("/review/queue?limit=0");
            (st, b, "validation_error")
        },
        {
            let (st, b) = s.get("/cycles/cycle-missing/report");
            (st, b, "not_found")
        },
        {
            let (st, b) = s.post("/benchmarks/none/run", &json!({}));
            (st, b, "not_found")
        },
    ];
    for (status, body, code) in cases {
        assert_api_error(status, &body, code);
    }

    let mut r = s
        .agent
        .post(format!("{}/infer", s.base))
        .header("content-type", "application/json")
        .send("{not json")
        .unwrap();
    let status = r.status().as_u16();
    let body: Value = r.body_mut().read_json().unwrap();
    assert_eq!(status, 400);
    assert_api_error(status, &body, "bad_request");

    let mut r = s.agent.delete(format!("{}/health", s.base)).call().unwrap();
    let status = r.status().as_u16();
    assert_eq!(status, 405);
    assert_api_error(status, &r.body_mut().read_json().unwrap(), "method_not_allowed");
}

#[test]
fn bearer_token_guards_everything_but_health() {
    let s = Server::start(Some("sekret"));
    assert_eq!(s.get("/health").0, 200);
    let (status, body) = s.get("/datasets");
    assert_eq!(status, 401);
    assert_api_error(status, &body, "unauthorized");
    let r = s
        .agent
        .get(format!("{}/datasets", s.base))
        .header("Authorization", "Bearer sekret")
        .call()
        .unwrap();
    assert_eq!(r.status().as_u16(), 200);
}

/// Drives the same pipeline over HTTP and directly against a second
/// workspace with the same seed; the resulting stores must be identical.
#[test]
fn http_and_core_paths_produce_identical_stores() {
    let s = Server::start(None);
    ingest(&s);
    let _: Value = s.ok(s.post("/augment", &json!({"total": 6, "carry_seed": true})));
    let opened: Value = s.ok(s.post("/cycles", &json!({ "queries": queries() })));
    let cycle_id = opened["cycle"]["cycle_id"].as_str().unwrap().to_owned();
    let decisions = ["approve", "edit", "reject", "approve"];
    for (item, d) in opened["items"].as_array().unwrap().iter().zip(decisions) {
        let rid = item["review_id"].as_str().unwrap();
        let edited = (d == "edit").then_some("Please see a dermatologist for a tailored plan.");
        let _: ReviewItem = s.ok(s.post(&format!("/review/{rid}/claim"), &json!({"reviewer": "dr-a"})));
        let _: ReviewItem = s.ok(s.post(&format!("/review/{rid}/verdict"), &verdict_body("dr-a", d, edited, None)));
    }
    let _: Value = s.ok(s.post(&format!("/cycles/{cycle_id}/merge"), &json!({})));
    let http_report: CycleReport = s.ok(s.get(&format!("/cycles/{cycle_id}/report")));

    let core = Workspace::open(None, Settings::default(), Some(SEED)).unwrap();
    core.curate(&IngestRequest {
        records: seed_records(),
        provenance: Provenance::Real,
    })
    .unwrap();
    core.augment(&AugmentRequest {
        total: Some(6),
        carry_seed: true,
        ..AugmentRequest::default()
    })
    .unwrap();
    let opened = core
        .open_cycle(&CycleRequest {
            dataset: None,
            queries: queries(),
            quota: None,
            sampling: None,
            model_ref: None,
        })
        .unwrap();
    let decisions = [Decision::Approve, Decision::Edit, Decision::Reject, Decision::Approve];
    for (item, d) in opened.items.iter().zip(decisions) {
        core.orchestrator.claim(&item.review_id, "dr-a", None).unwrap();
        core.orchestrator
            .submit_verdict(
                ReviewVerdict {
                    review_id: item.review_id.clone(),
                    reviewer: "dr-a".into(),
                    ratings: Ratings::new(5, 4, 4),
                    decision: d,
                    edited_answer: (d == Decision::Edit).then(|| "Please see a dermatologist for a tailored plan.".into()),
                    idempotency_key: None,
                },
                None,
            )
            .unwrap();
    }
    core.orchestrator.merge_cycle(&opened.cycle.cycle_id).unwrap();
    let core_report = core.orchestrator.cycle_report(&opened.cycle.cycle_id).unwrap();

    let manifests = |ws: &Workspace| ws.store.list().iter().map(|v| v.manifest()).collect::<Vec<_>>();
    assert_eq!(manifests(&s.ws), manifests(&core));
    assert_eq!(serde_json::to_value(&http_report).unwrap(), serde_json::to_value(&core_report).unwrap());
    assert_eq!(
        serde_json::to_value(s.ws.orchestrator.review_queue(None, None)).unwrap(),
        serde_json::to_value(core.orchestrator.review_queue(None, None)).unwrap()
    );
}
