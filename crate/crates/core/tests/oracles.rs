mod common;

use std::collections::HashSet;

use cen_core::eval::time_aware_filter;
use cen_core::{Snapshot, Triple};
use common::checks;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn run(check: checks::Check, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..1000 {
        let err = check(&mut rng);
        assert!(err <= 1e-10, "case {case}: discrepancy {err}");
    }
}

#[test]
fn conv_stack_matches_oracle() {
    run(checks::conv_case, 1);
}

#[test]
fn rgcn_layer_matches_oracle() {
    run(checks::rgcn_case, 2);
}

#[test]
fn score_all_matches_oracle() {
    run(checks::score_case, 3);
}

#[test]
fn time_aware_filter_matches_oracle() {
    run(checks::filter_case, 4);
}

#[test]
fn rank_matches_oracle() {
    run(checks::rank_case, 5);
}

#[test]
fn aggregate_matches_oracle() {
    run(checks::aggregate_case, 6);
}

#[test]
fn filter_keeps_answers_from_other_times() {
    let (s, r, o1, o2, o3) = (0, 0, 1, 2, 3);
    let t1 = Snapshot::new(1, vec![Triple::new(s, r, o1), Triple::new(s, r, o3)]);
    let all = [
        (1, Triple::new(s, r, o1)),
        (1, Triple::new(s, r, o3)),
        (2, Triple::new(s, r, o2)),
    ];
    let lib = time_aware_filter(s, r, &t1, o1);
    assert_eq!(lib, HashSet::from([o3]));
    assert_eq!(lib, common::filter_oracle(&all, 1, s, r, o1));
    // Scores placing o2 and o3 above the target: only o3 is filtered.
    let scores = [0.0, 0.5, 0.9, 0.8];
    let rank = cen_core::eval::rank(&scores, o1, &lib, cen_core::TieRule::Optimistic).unwrap();
    assert_eq!(rank, 2);
}
