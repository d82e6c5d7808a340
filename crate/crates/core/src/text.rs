//! Text normalization shared by hashing, deduplication and routing.

use std::collections::HashSet;

use unicode_normalization::UnicodeNormalization;

/// NFC normalization with `\r\n` and lone `\r` folded to `\n`.
pub fn canonical_text(s: &str) -> String {
    s.replace("\r\n", "\n").replace('\r', "\n").nfc().collect()
}

/// Lowercased alphanumeric word tokens.
pub fn tokens(s: &str) -> Vec<String> {
    s.nfc()
        .collect::<String>()
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Word 3-gram shingles over normalized tokens. Texts with fewer than three
/// tokens contribute a single shingle made of all their tokens.
pub fn word_trigrams(s: &str) -> HashSet<String> {
    let toks = tokens(s);
    if toks.len() < 3 {
        return if toks.is_empty() {
            HashSet::new()
        } else {
            std::iter::once(toks.join(" ")).collect()
        };
    }
    toks.windows(3).map(|w| w.join(" ")).collect()
}

/// Jaccard similarity of two shingle sets; two empty sets count as identical.
pub fn jaccard(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}
