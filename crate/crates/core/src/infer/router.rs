use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::TaskLabel;
use crate::text::tokens;

const SHIPPED_RULES: &str = include_str!("router_rules.txt");

#[derive(Debug, Error, PartialEq)]
pub enum RulesetError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
struct Term {
    words: Vec<String>,
    weight: f64,
}

/// Weighted keyword classes, one per task label.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordRuleset {
    classes: BTreeMap<TaskLabel, Vec<Term>>,
}

/// Routing decision with the per-class scores that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Route {
    pub task: TaskLabel,
    pub confidence: f64,
    pub scores: BTreeMap<TaskLabel, f64>,
}

// Fixed tie-break priority.
const PRIORITY: [TaskLabel; 3] = [TaskLabel::Diagnosis, TaskLabel::Treatment, TaskLabel::Counseling];

impl KeywordRuleset {
    /// The ruleset compiled into the crate.
    pub fn shipped() -> Self {
        Self::parse(SHIPPED_RULES).expect("shipped router rules parse")
    }

    pub fn shipped_source() -> &'static str {
        SHIPPED_RULES
    }

    /// Parses the plain-text rules format: `[class]` section headers naming a
    /// task label, then `<weight> <term words...>` lines. `#` starts a comment.
    pub fn parse(src: &str) -> Result<Self, RulesetError> {
        let mut classes: BTreeMap<TaskLabel, Vec<Term>> = BTreeMap::new();
        let mut current: Option<TaskLabel> = None;
        for (i, raw) in src.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let task = name.parse().map_err(|e: crate::corpus::UnknownTask| RulesetError::Syntax {
                    line: line_no,
                    message: e.to_string(),
                })?;
                classes.entry(task).or_default();
                current = Some(task);
                continue;
            }
            let task = current.ok_or_else(|| RulesetError::Syntax {
                line: line_no,
                message: "rule before any [class] header".into(),
            })?;
            let (weight, term) = line.split_once(char::is_whitespace).ok_or_else(|| RulesetError::Syntax {
                line: line_no,
                message: "expected \"<weight> <term>\"".into(),
            })?;
            let weight: f64 = weight.parse().map_err(|_| RulesetError::Syntax {
                line: line_no,
                message: format!("bad weight {weight:?}"),
            })?;
            if !(weight.is_finite() && weight > 0.0) {
                return Err(RulesetError::Syntax {
                    line: line_no,
                    message: "weight must be positive".into(),
                });
            }
            let words = tokens(term);
            if words.is_empty() {
                return Err(RulesetError::Syntax {
                    line: line_no,
                    message: "empty term".into(),
                });
            }
            classes.entry(task).or_default().push(Term { words, weight });
        }
        Ok(Self { classes })
    }

    /// Per-class score: sum of weights of terms occurring in `text` as
    /// contiguous word sequences (each term counted once).
    pub fn scores(&self, text: &str) -> BTreeMap<TaskLabel, f64> {
        let toks = tokens(text);
        TaskLabel::ALL
            .iter()
            .map(|task| {
                let score = self.classes.get(task).map_or(0.0, |terms| {
                    terms
                        .iter()
                        .filter(|t| toks.windows(t.words.len()).any(|w| w == t.words.as_slice()))
                        .map(|t| t.weight)
                        .sum()
                });
                (*task, score)
            })
            .collect()
    }

    /// True when `text` contains at least one term of `task`'s class.
    pub fn mentions(&self, task: TaskLabel, text: &str) -> bool {
        self.scores(text).get(&task).copied().unwrap_or(0.0) > 0.0
    }

    /// Routes a query. Total for non-empty input; empty input is the caller's
    /// error to report.
    pub fn route(&self, query: &str) -> Route {
        let scores = self.scores(query);
        let total: f64 = scores.values().sum();
        let mut best = PRIORITY[0];
        for task in PRIORITY {
            if scores[&task] > scores[&best] {
                best = task;
            }
        }
        let confidence = if total > 0.0 { scores[&best] / total } else { 0.0 };
        Route {
            task: best,
            confidence,
            scores,
        }
    }
}
