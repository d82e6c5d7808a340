//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use curaloop::backend::{MatchRule, ScriptFixture, ScriptedBackend, ScriptedReply};
use curaloop::corpus::{Benchmark, McqItem, OptionLetter, RawRecord, TaskLabel};
use curaloop::evalharness::{Prediction, PredictionRecord};

pub fn seed_records() -> Vec<RawRecord> {
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

/// Four diagnosis-routed queries followed by four treatment-routed ones.
pub fn cycle_queries() -> Vec<String> {
    [
        "Why do my hands sweat so much, is it a condition?",
        "Is my face sweating a symptom of a disease?",
        "Could sweating at night be a sign of an infection?",
        "What causes excessive underarm sweating, is it a disorder?",
        "What treatment can stop my armpits sweating?",
        "Which cream helps with sweaty feet?",
        "Would botox injections help my sweaty palms?",
        "Is there a medication for heavy sweating?",
    ]
    .map(String::from)
    .to_vec()
}

pub const OPTION_TEXTS: [&str; 4] = [
    "Primary focal hyperhidrosis",
    "Hyperthyroidism",
    "Anxiety disorder",
    "Menopause",
];

pub fn options() -> BTreeMap<OptionLetter, String> {
    OPTION_TEXTS
        .iter()
        .enumerate()
        .map(|(i, t)| (OptionLetter::nth(i).unwrap(), (*t).to_owned()))
        .collect()
}

pub fn letter(c: char) -> OptionLetter {
    OptionLetter::new(c).unwrap()
}

/// `per_task` items per task with a unique `[q-NNN]` tag in every stem and
/// gold letters cycling A..D.
pub fn benchmark(per_task: usize) -> Benchmark {
    let items = [TaskLabel::Diagnosis, TaskLabel::Treatment]
        .iter()
        .flat_map(|task| (0..per_task).map(move |k| (*task, k)))
        .enumerate()
        .map(|(i, (task, k))| McqItem {
            id: format!("q-{i:03}"),
            task,
            stem: format!("[q-{i:03}] Which option best fits case {k} for {task}?"),
            options: options(),
            gold: OptionLetter::nth(i % 4).unwrap(),
        })
        .collect();
    Benchmark::new("bench-80", items).unwrap()
}

/// Answers each benchmark item by its stem tag; `correct(i)` decides whether
/// item `i` gets its gold letter or the next letter.
pub fn scripted_answers(bench: &Benchmark, correct: impl Fn(usize) -> bool) -> ScriptedBackend {
    let matches = bench
        .items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let l = if correct(i) {
                item.gold
            } else {
                OptionLetter::nth((item.gold.index() + 1) % 4).unwrap()
            };
            MatchRule {
                contains: format!("[{}]", item.id),
                reply: ScriptedReply::text(format!("Answer: {l}")),
            }
        })
        .collect();
    ScriptedBackend::new(ScriptFixture {
        model: Some("scripted-answers".into()),
        matches,
        ..ScriptFixture::default()
    })
}

pub fn record(task: TaskLabel, gold: usize, pred: Option<usize>) -> PredictionRecord {
    PredictionRecord {
        item_id: String::new(),
        task,
        gold: OptionLetter::nth(gold).unwrap(),
        predicted: pred.map_or(Prediction::Abstain, |p| Prediction::Letter(OptionLetter::nth(p).unwrap())),
        raw_output: String::new(),
        note: None,
    }
}

/// Metrics from an explicit confusion matrix. Rows are gold classes,
/// columns are predicted classes plus a final abstain column.
pub struct OracleMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn confusion_oracle(gold: &[usize], pred: &[Option<usize>], classes: usize) -> OracleMetrics {
    assert_eq!(gold.len(), pred.len());
    let mut m = vec![vec![0u32; classes + 1]; classes];
    for (g, p) in gold.iter().zip(pred) {
        m[*g][p.unwrap_or(classes)] += 1;
    }
    let n: u32 = m.iter().flatten().sum();
    let diag: u32 = (0..classes).map(|c| m[c][c]).sum();
    let present: Vec<usize> = (0..classes).filter(|c| m[*c].iter().sum::<u32>() > 0).collect();
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    let mut f_sum = 0.0;
    for &c in &present {
        let tp = f64::from(m[c][c]);
        let col: u32 = (0..classes).map(|g| m[g][c]).sum();
        let row: u32 = m[c].iter().sum();
        let p = if col == 0 { 0.0 } else { tp / f64::from(col) };
        let r = tp / f64::from(row);
        let f = if tp == 0.0 { 0.0 } else { 2.0 * tp / f64::from(col + row) };
        p_sum += p;
        r_sum += r;
        f_sum += f;
    }
    let k = present.len() as f64;
    OracleMetrics {
        accuracy: f64::from(diag) / f64::from(n),
        precision: p_sum / k,
        recall: r_sum / k,
        f1: f_sum / k,
    }
}

pub mod machine;
