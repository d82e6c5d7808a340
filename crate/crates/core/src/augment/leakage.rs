use serde::{Deserialize, Serialize};

use crate::corpus::{Benchmark, QaItem};
use crate::text::word_trigrams;

/// A training item that shares much of a benchmark question's wording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageHit {
    pub item_id: String,
    pub mcq_id: String,
    /// Fraction of the benchmark stem's word trigrams found in the item.
    pub containment: f64,
}

/// Flags every (item, benchmark question) pair whose trigram containment is
/// at or above `threshold`, highest first.
pub fn leakage_check(items: &[QaItem], benchmark: &Benchmark, threshold: f64) -> Vec<LeakageHit> {
    let stems: Vec<_> = benchmark
        .items
        .iter()
        .map(|m| (m.id.as_str(), word_trigrams(&m.stem)))
        .filter(|(_, s)| !s.is_empty())
        .collect();
    let mut hits = Vec::new();
    for item in items {
        let shingles = word_trigrams(&format!("{}\n{}", item.query, item.answer));
        for (mcq_id, stem) in &stems {
            let containment = stem.intersection(&shingles).count() as f64 / stem.len() as f64;
            if containment >= threshold {
                hits.push(LeakageHit {
                    item_id: item.id.clone(),
                    mcq_id: (*mcq_id).to_owned(),
                    containment,
                });
            }
        }
    }
    hits.sort_by(|a, b| b.containment.total_cmp(&a.containment));
    hits
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::corpus::{McqItem, Provenance, TaskLabel};

    #[test]
    fn copied_stem_is_flagged() {
        let stem = "a teenager has dripping palms during exams what is the most likely diagnosis";
        let bench = Benchmark::new(
            "b",
            vec![McqItem {
                id: "m1".into(),
                task: TaskLabel::Diagnosis,
                stem: stem.into(),
                options: BTreeMap::from([
                    ("A".parse().unwrap(), "primary".into()),
                    ("B".parse().unwrap(), "secondary".into()),
                ]),
                gold: "A".parse().unwrap(),
            }],
        )
        .unwrap();
        let item = |id: &str, q: &str| QaItem {
            id: id.into(),
            query: q.into(),
            answer: "Primary focal hyperhidrosis.".into(),
            task: TaskLabel::Diagnosis,
            provenance: Provenance::Synthetic,
            source_ref: None,
            created_at: chrono::DateTime::<chrono::Utc>::UNIX_EPOCH,
        };
        let items = vec![item("copy", stem), item("fresh", "my feet sweat when I hike in summer")];
        let hits = leakage_check(&items, &bench, 0.5);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].item_id, "copy");
        assert_eq!(hits[0].containment, 1.0);
    }
}
