use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Candidate;
use crate::corpus::QaItem;
use crate::infer::KeywordRuleset;
use crate::text::{jaccard, word_trigrams};

pub const RULE_LENGTH: &str = "length";
pub const RULE_DUPLICATE: &str = "duplicate";
pub const RULE_BANNED: &str = "banned_content";
pub const RULE_TASK_KEYWORD: &str = "task_keyword";
/// Rejections made by the augmentation loop once a task's quota is full.
pub const RULE_OVER_QUOTA: &str = "over_quota";

pub const DEFAULT_NEAR_DUPLICATE_THRESHOLD: f64 = 0.85;

/// Plausibility rules, applied in order: length, near-duplicate,
/// banned content, task-keyword consistency.
#[derive(Debug, Clone)]
pub struct FilterRules {
    /// Minimum characters in each of query and answer.
    pub min_chars: usize,
    /// Maximum characters in each of query and answer.
    pub max_chars: usize,
    /// Word-trigram Jaccard at or above which a candidate is a near duplicate.
    pub near_duplicate_threshold: f64,
    /// Case-insensitive substrings that disqualify a candidate.
    pub banned_terms: Vec<String>,
    /// When set, a candidate labeled with a task must mention at least one
    /// term from that task's keyword class.
    pub task_keywords: Option<Arc<KeywordRuleset>>,
}

impl Default for FilterRules {
    fn default() -> Self {
        Self {
            min_chars: 12,
            max_chars: 4000,
            near_duplicate_threshold: DEFAULT_NEAR_DUPLICATE_THRESHOLD,
            banned_terms: [
                "as an ai language model",
                "i cannot provide medical advice",
                "lorem ipsum",
                "<patient question>",
                "<answer>",
                "<<item>>",
                "<<end>>",
            ]
            .map(String::from)
            .to_vec(),
            task_keywords: Some(Arc::new(KeywordRuleset::shipped())),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub generated: usize,
    pub accepted: usize,
    pub rejected_by_rule: BTreeMap<String, usize>,
}

impl FilterReport {
    pub fn rejected(&self) -> usize {
        self.rejected_by_rule.values().sum()
    }

    pub fn is_balanced(&self) -> bool {
        self.accepted + self.rejected() == self.generated
    }

    pub(crate) fn reject(&mut self, rule: &str) {
        self.generated += 1;
        *self.rejected_by_rule.entry(rule.to_owned()).or_default() += 1;
    }

    pub(crate) fn accept(&mut self) {
        self.generated += 1;
        self.accepted += 1;
    }

    pub fn merge(&mut self, other: &FilterReport) {
        self.generated += other.generated;
        self.accepted += other.accepted;
        for (rule, n) in &other.rejected_by_rule {
            *self.rejected_by_rule.entry(rule.clone()).or_default() += n;
        }
    }
}

/// Stateful filter: remembers the shingles of every existing and admitted
/// item so later candidates are checked against all of them.
pub struct CandidateFilter<'r> {
    rules: &'r FilterRules,
    pool: Vec<HashSet<String>>,
}

impl<'r> CandidateFilter<'r> {
    pub fn new<'a>(rules: &'r FilterRules, existing: impl IntoIterator<Item = &'a QaItem>) -> Self {
        let pool = existing
            .into_iter()
            .map(|i| word_trigrams(&format!("{}\n{}", i.query, i.answer)))
            .collect();
        Self { rules, pool }
    }

    /// First rule the candidate violates, if any.
    pub fn check(&self, c: &Candidate) -> Option<&'static str> {
        let r = self.rules;
        let lengths = [c.query.trim().chars().count(), c.answer.trim().chars().count()];
        if lengths.iter().any(|n| *n < r.min_chars || *n > r.max_chars) {
            return Some(RULE_LENGTH);
        }
        let shingles = word_trigrams(&c.text());
        if self
            .pool
            .iter()
            .any(|p| jaccard(&shingles, p) >= r.near_duplicate_threshold)
        {
            return Some(RULE_DUPLICATE);
        }
        let lower = c.text().to_lowercase();
        if r.banned_terms.iter().any(|t| lower.contains(&t.to_lowercase())) {
            return Some(RULE_BANNED);
        }
        if let (Some(rules), Some(task)) = (&r.task_keywords, c.task) {
            if !rules.mentions(task, &c.text()) {
                return Some(RULE_TASK_KEYWORD);
            }
        }
        None
    }

    pub fn admit(&mut self, c: &Candidate) {
        self.pool.push(word_trigrams(&c.text()));
    }

    /// Checks and admits each candidate in order.
    pub fn apply(&mut self, candidates: &[Candidate], report: &mut FilterReport) -> Vec<Candidate> {
        let mut accepted = Vec::new();
        for c in candidates {
            match self.check(c) {
                Some(rule) => report.reject(rule),
                None => {
                    self.admit(c);
                    report.accept();
                    accepted.push(c.clone());
                }
            }
        }
        accepted
    }
}

/// One-shot filtering of `candidates` against `existing`.
pub fn filter_candidates(
    candidates: &[Candidate],
    existing: &[QaItem],
    rules: &FilterRules,
) -> (Vec<Candidate>, FilterReport) {
    let mut report = FilterReport::default();
    let accepted = CandidateFilter::new(rules, existing).apply(candidates, &mut report);
    (accepted, report)
}
