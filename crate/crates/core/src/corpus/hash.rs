//! Content digest over a canonical serialization of dataset items.
//!
//! Canonical form: items sorted by id; each item rendered as one compact JSON
//! object with keys in lexicographic order (`answer`, `id`, `provenance`,
//! `query`, `source_ref`, `task`); every string NFC-normalized with line
//! endings folded to `\n`; each object terminated by `\n`. `created_at` is
//! metadata and is not part of the digest.

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::QaItem;
use crate::text::canonical_text;

// Field order here is the lexicographic key order of the canonical form.
#[derive(Serialize)]
struct CanonicalItem<'a> {
    answer: String,
    id: String,
    provenance: &'a str,
    query: String,
    source_ref: Option<String>,
    task: &'a str,
}

/// Canonical byte stream the digest is computed over.
pub fn canonical_stream(items: &[QaItem]) -> Vec<u8> {
    let mut sorted: Vec<&QaItem> = items.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut out = Vec::new();
    for item in sorted {
        let canonical = CanonicalItem {
            answer: canonical_text(&item.answer),
            id: canonical_text(&item.id),
            provenance: item.provenance.as_str(),
            query: canonical_text(&item.query),
            source_ref: item.source_ref.as_deref().map(canonical_text),
            task: item.task.as_str(),
        };
        serde_json::to_writer(&mut out, &canonical).expect("canonical item serializes");
        out.push(b'\n');
    }
    out
}

/// `sha256:<hex>` digest of [`canonical_stream`].
pub fn manifest_hash(items: &[QaItem]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(canonical_stream(items))))
}

#[cfg(test)]
mod tests {
    use chrono::{DateTime, Utc};

    use super::*;
    use crate::corpus::{Provenance, TaskLabel};

    fn item(id: &str, q: &str, a: &str) -> QaItem {
        QaItem {
            id: id.into(),
            query: q.into(),
            answer: a.into(),
            task: TaskLabel::Diagnosis,
            provenance: Provenance::Real,
            source_ref: None,
            created_at: DateTime::<Utc>::UNIX_EPOCH,
        }
    }

    #[test]
    fn deterministic_and_sensitive() {
        let a = vec![item("1", "q", "answer"), item("2", "q2", "a2")];
        let b = vec![item("1", "q", "answeR"), item("2", "q2", "a2")];
        assert_eq!(manifest_hash(&a), manifest_hash(&a));
        assert_ne!(manifest_hash(&a), manifest_hash(&b));
    }

    #[test]
    fn timestamps_do_not_affect_digest() {
        let a = vec![item("1", "q", "a")];
        let mut b = a.clone();
        b[0].created_at = Utc::now();
        assert_eq!(manifest_hash(&a), manifest_hash(&b));
    }

    #[test]
    fn crlf_and_decomposed_forms_hash_like_canonical() {
        let a = vec![item("1", "line one\nline two", "caf\u{e9}")];
        let b = vec![item("1", "line one\r\nline two", "cafe\u{301}")];
        assert_eq!(manifest_hash(&a), manifest_hash(&b));
    }
}
