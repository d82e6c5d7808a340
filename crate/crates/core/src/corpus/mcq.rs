use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{CorpusError, TaskLabel};

/// Option letter `A`..=`F`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OptionLetter(char);

impl OptionLetter {
    pub const MAX_OPTIONS: usize = 6;

    pub fn new(c: char) -> Option<Self> {
        ('A'..='F').contains(&c).then_some(Self(c))
    }

    /// Letter at zero-based position (`0` → `A`).
    pub fn nth(i: usize) -> Option<Self> {
        (i < Self::MAX_OPTIONS).then(|| Self((b'A' + i as u8) as char))
    }

    pub fn as_char(self) -> char {
        self.0
    }

    pub fn index(self) -> usize {
        (self.0 as u8 - b'A') as usize
    }
}

impl fmt::Display for OptionLetter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::str::FromStr for OptionLetter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Self::new(c).ok_or_else(|| format!("option letter {s:?} outside A..F")),
            _ => Err(format!("option letter {s:?} must be a single character")),
        }
    }
}

impl Serialize for OptionLetter {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OptionLetter {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Multiple-choice benchmark question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqItem {
    pub id: String,
    pub task: TaskLabel,
    pub stem: String,
    pub options: BTreeMap<OptionLetter, String>,
    pub gold: OptionLetter,
}

impl McqItem {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |reason: String| CorpusError::InvalidMcq {
            id: self.id.clone(),
            reason,
        };
        if self.id.trim().is_empty() {
            return Err(fail("id is empty".into()));
        }
        if self.stem.trim().is_empty() {
            return Err(fail("stem is empty".into()));
        }
        let n = self.options.len();
        if !(2..=OptionLetter::MAX_OPTIONS).contains(&n) {
            return Err(fail(format!("{n} options; expected 2 to 6")));
        }
        // BTreeMap iterates in letter order, so contiguity is position == index.
        if let Some((pos, letter)) = self
            .options
            .keys()
            .enumerate()
            .find(|(pos, letter)| letter.index() != *pos)
        {
            return Err(fail(format!("option letters not contiguous from A (found {letter} at position {pos})")));
        }
        let mut seen = HashSet::new();
        for text in self.options.values() {
            if text.trim().is_empty() {
                return Err(fail("empty option text".into()));
            }
            if !seen.insert(text.trim()) {
                return Err(fail(format!("duplicate option text {:?}", text.trim())));
            }
        }
        if !self.options.contains_key(&self.gold) {
            return Err(fail(format!("gold {} is not one of the options", self.gold)));
        }
        Ok(())
    }

    pub fn letters(&self) -> Vec<OptionLetter> {
        self.options.keys().copied().collect()
    }
}

/// A named, validated MCQ benchmark.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Benchmark {
    pub id: String,
    pub items: Vec<McqItem>,
}

impl Benchmark {
    pub fn new(id: impl Into<String>, items: Vec<McqItem>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for item in &items {
            item.validate()?;
            if !seen.insert(item.id.as_str()) {
                return Err(CorpusError::DuplicateId(item.id.clone()));
            }
        }
        Ok(Self { id: id.into(), items })
    }

    /// Parses a benchmark file: one MCQ JSON object per line.
    pub fn from_jsonl(id: impl Into<String>, body: &str) -> Result<Self, CorpusError> {
        let id = id.into();
        let mut items = Vec::new();
        for (line_no, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let item: McqItem = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
                what: format!("benchmark {id}"),
                line: line_no + 1,
                message: e.to_string(),
            })?;
            items.push(item);
        }
        Self::new(id, items)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for item in &self.items {
            out.push_str(&serde_json::to_string(item).expect("McqItem serializes"));
            out.push('\n');
        }
        out
    }

    pub fn task_counts(&self) -> super::TaskCounts {
        super::count_tasks(self.items.iter().map(|i| i.task))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mcq(options: &[(&str, &str)], gold: &str) -> McqItem {
        McqItem {
            id: "m1".into(),
            task: TaskLabel::Treatment,
            stem: "Which is first-line for axillary sweating?".into(),
            options: options
                .iter()
                .map(|(k, v)| (k.parse().unwrap(), v.to_string()))
                .collect(),
            gold: gold.parse().unwrap(),
        }
    }

    #[test]
    fn valid_item_passes() {
        mcq(&[("A", "Aluminium chloride"), ("B", "Surgery"), ("C", "Nothing")], "A")
            .validate()
            .unwrap();
    }

    #[test]
    fn rejects_gaps_duplicates_and_bad_gold() {
        assert!(mcq(&[("A", "x"), ("C", "y")], "A").validate().is_err());
        assert!(mcq(&[("B", "x"), ("C", "y")], "B").validate().is_err());
        assert!(mcq(&[("A", "same"), ("B", "same")], "A").validate().is_err());
        assert!(mcq(&[("A", "x"), ("B", "y")], "C").validate().is_err());
        assert!(mcq(&[("A", "x")], "A").validate().is_err());
    }

    #[test]
    fn letters_serialize_as_strings() {
        let item = mcq(&[("A", "x"), ("B", "y")], "B");
        let json = serde_json::to_string(&item).unwrap();
        assert!(json.contains(r#""options":{"A":"x","B":"y"}"#), "{json}");
        assert!(json.contains(r#""gold":"B""#));
        let back: McqItem = serde_json::from_str(&json).unwrap();
        assert_eq!(back, item);
        assert!(serde_json::from_str::<OptionLetter>(r#""G""#).is_err());
    }

    #[test]
    fn benchmark_rejects_duplicate_ids() {
        let a = mcq(&[("A", "x"), ("B", "y")], "A");
        assert!(matches!(
            Benchmark::new("b", vec![a.clone(), a]),
            Err(CorpusError::DuplicateId(_))
        ));
    }
}
