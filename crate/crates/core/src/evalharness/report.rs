use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;

use super::{round_half_up, EvalError, EvalRun, MetricsReport, SliceMetrics};
use crate::corpus::TaskLabel;
use crate::fsio::write_atomic;

const CELL: usize = 6;

fn cells(out: &mut String, m: Option<&SliceMetrics>) {
    match m {
        Some(m) => {
            for v in [m.accuracy, m.precision, m.recall, m.f1] {
                let _ = write!(out, " {:>CELL$.3}", round_half_up(v, 3));
            }
        }
        None => {
            for _ in 0..4 {
                let _ = write!(out, " {:>CELL$}", "-");
            }
        }
    }
}

/// Plain-text comparison table: one row per labelled report, with
/// Acc/Prec/Rec/F1 for each evaluated task and overall, at 3 decimals.
pub fn render_table(rows: &[(String, &MetricsReport)]) -> String {
    let tasks: Vec<TaskLabel> = TaskLabel::ALL
        .into_iter()
        .filter(|t| rows.iter().any(|(_, r)| r.per_task.contains_key(t)))
        .collect();
    let label_w = rows.iter().map(|(l, _)| l.chars().count()).max().unwrap_or(0).max(5);
    let group_w = 4 * (CELL + 1);

    let mut out = String::new();
    let _ = write!(out, "{:<label_w$} ", "Model");
    for t in &tasks {
        let name = t.as_str();
        let mut title = name[..1].to_uppercase();
        title.push_str(&name[1..]);
        let _ = write!(out, "|{title:^group_w$}");
    }
    let _ = writeln!(out, "|{:^group_w$}", "Overall");
    let _ = write!(out, "{:<label_w$} ", "");
    for _ in 0..=tasks.len() {
        out.push('|');
        for h in ["Acc", "Prec", "Rec", "F1"] {
            let _ = write!(out, " {h:>CELL$}");
        }
    }
    out.push('\n');
    let _ = writeln!(out, "{}", "-".repeat(label_w + 1 + (tasks.len() + 1) * (group_w + 1)));
    for (label, report) in rows {
        let _ = write!(out, "{label:<label_w$} ");
        for t in &tasks {
            out.push('|');
            cells(&mut out, report.per_task.get(t));
        }
        out.push('|');
        cells(&mut out, Some(&report.overall));
        out.push('\n');
    }
    out
}

/// Completed runs, optionally persisted as `runs/<run_id>.json`.
pub struct RunStore {
    dir: Option<PathBuf>,
    runs: RwLock<BTreeMap<String, Arc<EvalRun>>>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> EvalError {
    EvalError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

impl RunStore {
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            runs: RwLock::default(),
        }
    }

    pub fn open(root: &Path) -> Result<Self, EvalError> {
        let dir = root.join("runs");
        let mut runs = BTreeMap::new();
        if dir.is_dir() {
            for entry in std::fs::read_dir(&dir).map_err(|e| io_err(&dir, e))? {
                let path = entry.map_err(|e| io_err(&dir, e))?.path();
                if path.extension().and_then(|e| e.to_str()) != Some("json") {
                    continue;
                }
                let raw = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
                let run: EvalRun = serde_json::from_str(&raw).map_err(|e| io_err(&path, e))?;
                runs.insert(run.run_id.clone(), Arc::new(run));
            }
        }
        Ok(Self {
            dir: Some(dir),
            runs: RwLock::new(runs),
        })
    }

    pub fn save(&self, run: EvalRun) -> Result<Arc<EvalRun>, EvalError> {
        let mut runs = self.runs.write();
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{}.json", run.run_id));
            let body = serde_json::to_vec_pretty(&run).expect("run serializes");
            write_atomic(&path, &body).map_err(|e| io_err(&path, e))?;
        }
        let run = Arc::new(run);
        runs.insert(run.run_id.clone(), run.clone());
        Ok(run)
    }

    pub fn get(&self, run_id: &str) -> Result<Arc<EvalRun>, EvalError> {
        self.runs
            .read()
            .get(run_id)
            .cloned()
            .ok_or_else(|| EvalError::UnknownRun(run_id.to_owned()))
    }

    /// Runs in id order, which is creation order.
    pub fn list(&self) -> Vec<Arc<EvalRun>> {
        self.runs.read().values().cloned().collect()
    }
}
