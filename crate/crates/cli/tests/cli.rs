use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SEED_RECORDS: &str = r#"{"query":"Why do my palms drip during exams? Is this a medical condition?","answer":"This pattern suggests primary focal hyperhidrosis.","task":"diagnosis"}
{"query":"Could my night sweats be a symptom of something?","answer":"Night sweats can have a secondary cause; see a doctor.","task":"diagnosis"}
{"query":"Is sweating only on my feet a sign of a disorder?","answer":"Isolated plantar sweating is usually primary hyperhidrosis.","task":"diagnosis"}
{"query":"Which antiperspirant should I try for my underarms?","answer":"Start with an aluminium chloride antiperspirant at night.","task":"treatment"}
{"query":"Is botox an option for sweaty hands?","answer":"Botulinum toxin injections are a common treatment option.","task":"treatment"}
{"query":"Does iontophoresis work for sweaty feet?","answer":"Tap-water iontophoresis helps many people with plantar sweating.","task":"treatment"}
"#;

const QUERIES: &str = "Why do my hands sweat so much, is it a condition?
What treatment can stop my armpits sweating?
Is my face sweating a symptom of a disease?
Which cream helps with sweaty feet?
";

fn curaloop(store: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curaloop"))
        .arg("--store")
        .arg(store)
        .args(["--seed", "5"])
        .args(args)
        .env_remove("CURALOOP_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok_json(store: &Path, args: &[&str]) -> Value {
    let out = curaloop(store, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{args:?}: bad JSON ({e})"))
}

fn setup() -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("seed.jsonl"), SEED_RECORDS).unwrap();
    std::fs::write(dir.path().join("queries.txt"), QUERIES).unwrap();
    let store = dir.path().join("store");
    (dir, store)
}

#[test]
fn review_cycle_across_invocations() {
    let (dir, store) = setup();
    let seed = dir.path().join("seed.jsonl");
    let v1 = ok_json(&store, &["curate", seed.to_str().unwrap()]);
    assert_eq!(v1["item_count"], 6);

    let aug = ok_json(&store, &["augment", "--quota", "diagnosis=4,treatment=4", "--carry-seed"]);
    assert_eq!(aug["version"]["item_count"], 14);
    assert_eq!(aug["version"]["parent"], 1);

    let ft = ok_json(&store, &["finetune", "--lr", "0.0002", "--epochs", "3"]);
    assert_eq!(ft["records"], 14);
    let artifact = ft["selected"].as_str().unwrap().to_owned();

    let opened = ok_json(
        &store,
        &["cycle", "open", dir.path().join("queries.txt").to_str().unwrap(), "--model-ref", &artifact],
    );
    let cycle_id = opened["cycle"]["cycle_id"].as_str().unwrap().to_owned();
    let items = ok_json(&store, &["cycle", "review", "--cycle", &cycle_id, "--status", "pending"]);
    let ids: Vec<String> = items
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["review_id"].as_str().unwrap().to_owned())
        .collect();
    assert_eq!(ids.len(), 4);

    ok_json(&store, &["cycle", "claim", &ids[0], "--reviewer", "dr-a"]);
    let plan = [("approve", None), ("edit", Some("See a dermatologist for a tailored plan.")), ("reject", None), ("approve", None)];
    for (rid, (decision, edit)) in ids.iter().zip(plan) {
        let mut args = vec!["cycle", "verdict", rid, "--reviewer", "dr-a", "--decision", decision, "--ratings", "5,4,4"];
        if let Some(e) = edit {
            args.extend(["--edited-answer", e]);
        }
        ok_json(&store, &args);
    }

    let merged = ok_json(&store, &["cycle", "merge", &cycle_id]);
    assert_eq!(merged["version"]["item_count"], 17);
    let report = ok_json(&store, &["cycle", "report", &cycle_id]);
    assert_eq!(report["verdicts"]["approve"], 2);
    assert_eq!(report["verdicts"]["edit"], 1);
    assert_eq!(report["verdicts"]["reject"], 1);
    assert_eq!(report["dataset_delta"], 3);

    let versions = ok_json(&store, &["datasets"]);
    let versions = versions.as_array().unwrap();
    assert_eq!(versions.len(), 3);
    let stamps: Vec<&str> = versions.iter().map(|v| v["created_at"].as_str().unwrap()).collect();
    assert!(stamps.windows(2).all(|w| w[0] < w[1]), "timestamps must increase across runs: {stamps:?}");

    let log = std::fs::read_to_string(store.join("reviews").join("verdicts.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);
}

#[test]
fn benchmark_and_eval() {
    let (dir, store) = setup();
    let bench = dir.path().join("bench.jsonl");
    std::fs::write(
        &bench,
        r#"{"id":"b1","stem":"Sweating limited to the palms since childhood most likely indicates:","options":{"A":"Primary focal hyperhidrosis","B":"Hyperthyroidism"},"gold":"A","task":"diagnosis"}
{"id":"b2","stem":"First-line treatment for underarm sweating is:","options":{"A":"Surgery","B":"Aluminium chloride antiperspirant"},"gold":"B","task":"treatment"}
"#,
    )
    .unwrap();
    let b = ok_json(&store, &["curate", bench.to_str().unwrap(), "--benchmark", "mini"]);
    assert_eq!(b["item_count"], 2);
    let run = ok_json(&store, &["eval", "mini", "--greedy", "--json"]);
    assert_eq!(run["report"]["overall"]["n"], 2);

    let out = curaloop(&store, &["eval", "mini"]);
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("Diagnosis") && table.contains("Overall"), "{table}");
}

#[test]
fn infer_routes_the_query() {
    let (dir, store) = setup();
    ok_json(&store, &["curate", dir.path().join("seed.jsonl").to_str().unwrap()]);
    let r = ok_json(&store, &["infer", "What treatment helps sweaty palms?", "--greedy"]);
    assert_eq!(r["task_pred"], "treatment");
    assert!(!r["response"].as_str().unwrap_or_default().is_empty(), "{r}");
}

#[test]
fn errors_are_reported_with_codes() {
    let (_dir, store) = setup();
    let out = curaloop(&store, &["cycle", "report", "cycle-nope"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("error[not_found]"), "{err}");

    let out = curaloop(&store, &["augment", "--total", "4"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("error[validation_error]"));
}
