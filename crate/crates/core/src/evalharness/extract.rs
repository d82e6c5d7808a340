use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::OptionLetter;

/// An extracted choice, or `ABSTAIN` when no rule gives a single letter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Prediction {
    Letter(OptionLetter),
    Abstain,
}

pub const ABSTAIN: &str = "ABSTAIN";

impl Prediction {
    pub fn letter(self) -> Option<OptionLetter> {
        match self {
            Prediction::Letter(l) => Some(l),
            Prediction::Abstain => None,
        }
    }

    pub fn is_abstain(self) -> bool {
        self == Prediction::Abstain
    }
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prediction::Letter(l) => write!(f, "{l}"),
            Prediction::Abstain => f.write_str(ABSTAIN),
        }
    }
}

impl FromStr for Prediction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == ABSTAIN {
            return Ok(Prediction::Abstain);
        }
        s.parse::<OptionLetter>()
            .map(Prediction::Letter)
            .map_err(|_| format!("expected an option letter or {ABSTAIN}, got {s:?}"))
    }
}

impl Serialize for Prediction {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Prediction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

static ANSWER_IS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i:\banswer)(?:\s+is\s*:?|\s*:)\s*\(?([A-F])\b").unwrap());
static PAREN_LETTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\(([A-F])\)").unwrap());
static LINE_START_LETTER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^\s*([A-F])(?:[.)](?:\s|$)|\s*$)").unwrap());

fn single<I: IntoIterator<Item = OptionLetter>>(found: I, options: &BTreeMap<OptionLetter, String>) -> Option<OptionLetter> {
    let set: BTreeSet<OptionLetter> = found.into_iter().filter(|l| options.contains_key(l)).collect();
    (set.len() == 1).then(|| *set.iter().next().unwrap())
}

fn letters_from<'a>(res: impl IntoIterator<Item = &'a Regex>, raw: &str) -> Vec<OptionLetter> {
    res.into_iter()
        .flat_map(|re| re.captures_iter(raw).collect::<Vec<_>>())
        .filter_map(|c| c[1].chars().next().and_then(OptionLetter::new))
        .collect()
}

/// Ordered extraction grammar over a free-text answer:
///
/// 1. `answer is X` / `Answer: X`
/// 2. `(X)`, or `X.` / `X)` / a bare `X` at the start of a line
/// 3. exactly one option's text appears in the output (case-insensitive)
///
/// The first rule that yields exactly one letter from `options` wins.
pub fn extract_choice(raw: &str, options: &BTreeMap<OptionLetter, String>) -> Prediction {
    let rules: [&dyn Fn() -> Option<OptionLetter>; 3] = [
        &|| single(letters_from([&*ANSWER_IS], raw), options),
        &|| single(letters_from([&*PAREN_LETTER, &*LINE_START_LETTER], raw), options),
        &|| {
            let lower = raw.to_lowercase();
            single(
                options
                    .iter()
                    .filter(|(_, text)| {
                        let t = text.trim().to_lowercase();
                        !t.is_empty() && lower.contains(&t)
                    })
                    .map(|(l, _)| *l),
                options,
            )
        },
    ];
    rules
        .iter()
        .find_map(|rule| rule())
        .map_or(Prediction::Abstain, Prediction::Letter)
}
