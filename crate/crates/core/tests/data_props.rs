use std::collections::HashSet;

use cen_core::{
    add_inverse_relations, load_quadruples, save_dataset, synth_generate, Snapshot, SynthConfig,
    TkgDataset, Triple,
};
use proptest::prelude::*;

prop_compose! {
    fn dataset()(
        n_ent in 2usize..12,
        n_rel in 1usize..5,
        n_time in 3usize..10,
    )(
        facts in prop::collection::vec(
            prop::collection::vec((0..n_ent, 0..n_rel, 0..n_ent), 1..8),
            n_time,
        ),
        cut in (1usize..n_time - 1, 0usize..100),
        n_ent in Just(n_ent),
        n_rel in Just(n_rel),
    ) -> TkgDataset {
        let snapshots: Vec<Snapshot> = facts
            .into_iter()
            .enumerate()
            .map(|(t, fs)| {
                let mut s = Snapshot::new(t, fs.into_iter().map(|(s, r, o)| Triple::new(s, r, o)).collect());
                s.dedup();
                s
            })
            .collect();
        let test_end = snapshots.len() - 1;
        let train_end = cut.0 - 1;
        let valid_end = train_end + 1 + cut.1 % (test_end - train_end);
        TkgDataset {
            num_entities: n_ent,
            num_relations: n_rel,
            inverse_added: false,
            snapshots,
            train_end,
            valid_end: valid_end.min(test_end),
            test_end,
            granularity: "step".into(),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn save_then_load_reproduces_snapshots(data in dataset()) {
        let dir = tempfile::tempdir().unwrap();
        let [tr, va, te] = save_dataset(&data, dir.path()).unwrap();
        let back = load_quadruples(&tr, &va, &te, Some(&dir.path().join("stat.txt"))).unwrap();
        prop_assert_eq!(&back.snapshots, &data.snapshots);
        prop_assert_eq!(
            (back.num_entities, back.num_relations, back.train_end, back.valid_end, back.test_end),
            (data.num_entities, data.num_relations, data.train_end, data.valid_end, data.test_end)
        );
    }

    #[test]
    fn augmentation_mirrors_every_fact(data in dataset()) {
        let aug = add_inverse_relations(&data).unwrap();
        aug.validate().unwrap();
        let nr = data.num_relations;
        for s in &aug.snapshots {
            let set: HashSet<Triple> = s.facts.iter().copied().collect();
            for f in &s.facts {
                let mirror = if f.relation < nr {
                    Triple::new(f.object, f.relation + nr, f.subject)
                } else {
                    Triple::new(f.object, f.relation - nr, f.subject)
                };
                prop_assert!(set.contains(&mirror), "missing mirror of {:?}", f);
            }
            prop_assert_eq!(s.len(), 2 * data.snapshots[s.time].len());
        }
    }

    #[test]
    fn synth_is_reproducible_and_verifiable(seed in any::<u64>()) {
        let cfg = SynthConfig { seed, num_timestamps: 40, drift_time: Some(25), ..SynthConfig::default() };
        let (a, la) = synth_generate(&cfg).unwrap();
        let (b, lb) = synth_generate(&cfg).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&la, &lb);
        cen_core::verify_pattern_log(&a, &cfg, &la).unwrap();
    }
}
