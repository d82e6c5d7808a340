use std::sync::Arc;

use curaloop::corpus::{DatasetStore, Provenance, RawRecord, TaskLabel};
use curaloop::finetune::{export_sft, grid_configs, run_training, AdapterConfig, MockTrainer, RunConfig, SearchGrid};
use curaloop::ids::IdGenerator;
use curaloop::prompt::{render_qa, QA_TEMPLATE};
use proptest::prelude::*;

fn corpus() -> impl Strategy<Value = Vec<RawRecord>> {
    prop::collection::vec(
        ("\\PC{0,20}[a-z]\\PC{0,20}", "\\s{0,2}\\PC{0,10}[a-z\u{e9}]\\PC{0,30}\\s{0,2}", prop::sample::select(TaskLabel::ALL.to_vec())),
        1..20,
    )
    .prop_map(|v| v.into_iter().map(|(q, a, t)| RawRecord::new(&q, &a, t)).collect())
}

fn config(lr: f64, epochs: u32, dataset_version: u64) -> RunConfig {
    RunConfig {
        base_model: "llama-3.2-1b".into(),
        learning_rate: lr,
        epochs,
        adapter: AdapterConfig::default(),
        seed: 1,
        dataset_version,
        resume_from: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_mask_splits_exactly_at_the_prompt(records in corpus(), seed in any::<u64>()) {
        let store = DatasetStore::in_memory(Arc::new(IdGenerator::seeded(seed)));
        let v = store.ingest_items(&records, Provenance::Real).unwrap();
        let sft = export_sft(&v, QA_TEMPLATE).unwrap();
        prop_assert_eq!(sft.len(), v.len());
        let mut items: Vec<_> = v.items().iter().collect();
        items.sort_by(|a, b| a.id.cmp(&b.id));
        for (rec, item) in sft.iter().zip(items) {
            let (masked, trained) = rec.split();
            prop_assert_eq!(&masked, &render_qa(&item.query, item.task));
            prop_assert_eq!(trained.as_str(), item.answer.trim());
            prop_assert_eq!(format!("{masked}{trained}"), rec.text());
        }
    }

    #[test]
    fn mock_artifact_id_is_a_function_of_inputs(records in corpus(), lr_exp in -6i32..-2, epochs in 1u32..6) {
        let store = DatasetStore::in_memory(Arc::new(IdGenerator::seeded(3)));
        let v = store.ingest_items(&records, Provenance::Real).unwrap();
        let sft = export_sft(&v, QA_TEMPLATE).unwrap();
        let cfg = config(10f64.powi(lr_exp), epochs, v.version_id());
        let trainer = MockTrainer::new();
        let a = run_training(&sft, &cfg, &trainer).unwrap();
        let b = run_training(&sft, &cfg, &MockTrainer::new()).unwrap();
        prop_assert_eq!(&a.artifact_id, &b.artifact_id);
        let other = config(10f64.powi(lr_exp) * 2.0, epochs, v.version_id());
        prop_assert_ne!(a.artifact_id, run_training(&sft, &other, &trainer).unwrap().artifact_id);
    }

    #[test]
    fn grid_is_complete_and_unique(
        lrs in prop::collection::btree_set(1u32..10_000, 1..6),
        epochs in prop::collection::btree_set(1u32..20, 1..5),
    ) {
        let grid = SearchGrid {
            learning_rates: lrs.iter().map(|l| f64::from(*l) * 1e-7).collect(),
            epochs: epochs.iter().copied().collect(),
        };
        let configs = grid_configs("llama-3.2-1b", &grid, AdapterConfig::default(), 1, 0).unwrap();
        prop_assert_eq!(configs.len(), lrs.len() * epochs.len());
        for (i, a) in configs.iter().enumerate() {
            for b in &configs[..i] {
                prop_assert!(a.learning_rate != b.learning_rate || a.epochs != b.epochs);
            }
        }
    }
}
