//! Library-versus-oracle comparisons on one random case each. Every
//! function returns the largest absolute discrepancy found.

use std::collections::HashSet;

use cen_core::decoder::{score_all, DecoderSettings, DecoderVars};
use cen_core::encoder::rgcn_layer;
use cen_core::eval::{aggregate, rank, time_aware_filter};
use cen_core::tape::conv_stack;
use cen_core::{Activation, Snapshot, Tape, Tensor, TieRule, Triple};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::*;

const ACTS: [Activation; 3] = [Activation::Relu, Activation::Tanh, Activation::Identity];

fn tensor(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

fn random_bank(rng: &mut ChaCha8Rng, c: usize, m: usize) -> Vec<[Vec<f64>; 2]> {
    (0..c)
        .map(|_| {
            [
                (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            ]
        })
        .collect()
}

fn bank_tensor(bank: &[[Vec<f64>; 2]]) -> Tensor {
    let m = bank[0][0].len();
    let data = bank
        .iter()
        .flat_map(|k| k[0].iter().chain(&k[1]).copied())
        .collect();
    Tensor::new(vec![bank.len(), 2, m], data).unwrap()
}

pub fn conv_case(rng: &mut ChaCha8Rng) -> f64 {
    let d = rng.gen_range(1..=9);
    let c = rng.gen_range(1..=4);
    let m = [1, 3, 5][rng.gen_range(0..3)];
    let pair = random_mat(rng, 2, d);
    let bank = random_bank(rng, c, m);
    let expect = conv_oracle(&[pair[0].clone(), pair[1].clone()], &bank);
    let mut tape = Tape::new();
    let p = tape.constant(tensor(&pair));
    let k = tape.constant(bank_tensor(&bank));
    let out = conv_stack(&mut tape, p, k).unwrap();
    assert_eq!(tape.shape(out), &[c, d]);
    max_abs_diff(tape.value(out).data(), &flatten(&expect))
}

pub fn rgcn_case(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.gen_range(1..=8);
    let nr = rng.gen_range(1..=4);
    let d = rng.gen_range(1..=6);
    let a = ACTS[rng.gen_range(0..3)];
    let h = random_mat(rng, n, d);
    let rel = random_mat(rng, nr, d);
    let wm = random_mat(rng, d, d);
    let ws = random_mat(rng, d, d);
    let g = random_snapshot(rng, 0, n, nr, 12);
    let expect = rgcn_oracle(&h, &rel, &g.facts, &wm, &ws, a);
    let mut tape = Tape::new();
    let (hv, rv) = (tape.constant(tensor(&h)), tape.constant(tensor(&rel)));
    let (mv, sv) = (tape.constant(tensor(&wm)), tape.constant(tensor(&ws)));
    let out = rgcn_layer(&mut tape, hv, rv, &g, mv, sv, a).unwrap();
    max_abs_diff(tape.value(out).data(), &flatten(&expect))
}

pub fn random_decoder_case(rng: &mut ChaCha8Rng, single_channel: bool) -> DecoderCase {
    let n = rng.gen_range(2..=8);
    let nr = rng.gen_range(1..=4);
    let d = rng.gen_range(1..=6);
    let c = rng.gen_range(1..=3);
    let k = rng.gen_range(1..=3);
    let banks = if single_channel { 1 } else { k };
    DecoderCase {
        reps: (0..k).map(|_| random_mat(rng, n, d)).collect(),
        rel: random_mat(rng, nr, d),
        queries: (0..rng.gen_range(1..=4))
            .map(|_| (rng.gen_range(0..n), rng.gen_range(0..nr)))
            .collect(),
        channels: (0..banks).map(|_| random_bank(rng, c, 3)).collect(),
        fc_w: random_mat(rng, c * d, d),
        fc_b: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        activation: ACTS[rng.gen_range(0..3)],
        single_channel,
    }
}

/// Library logits for a decoder case.
pub fn library_scores(case: &DecoderCase) -> Vec<f64> {
    let mut tape = Tape::new();
    let reps: Vec<_> = case.reps.iter().map(|r| tape.constant(tensor(r))).collect();
    let rel = tape.constant(tensor(&case.rel));
    let dec = DecoderVars {
        channels: case
            .channels
            .iter()
            .map(|b| tape.constant(bank_tensor(b)))
            .collect(),
        fc_w: tape.constant(tensor(&case.fc_w)),
        fc_b: tape.constant(Tensor::new(vec![1, case.fc_b.len()], case.fc_b.clone()).unwrap()),
    };
    let settings = DecoderSettings {
        activation: case.activation,
        dropout: 0.0,
        single_channel: case.single_channel,
    };
    let mut rng = rand::rngs::mock::StepRng::new(0, 1);
    let out = score_all(
        &mut tape,
        &reps,
        rel,
        &case.queries,
        &dec,
        &settings,
        false,
        &mut rng,
    )
    .unwrap();
    tape.value(out).data().to_vec()
}

pub fn score_case(rng: &mut ChaCha8Rng) -> f64 {
    let single = rng.gen_bool(0.3);
    let case = random_decoder_case(rng, single);
    max_abs_diff(&library_scores(&case), &flatten(&score_oracle(&case)))
}

pub fn filter_case(rng: &mut ChaCha8Rng) -> f64 {
    let (n, nr, times) = (
        rng.gen_range(2..=6),
        rng.gen_range(1..=3),
        rng.gen_range(1..=4),
    );
    let snaps: Vec<Snapshot> = (0..times)
        .map(|t| random_snapshot(rng, t, n, nr, 10))
        .collect();
    let all: Vec<(usize, Triple)> = snaps
        .iter()
        .flat_map(|s| s.facts.iter().map(move |f| (s.time, *f)))
        .collect();
    let t = rng.gen_range(0..times);
    let Some(q) = snaps[t].facts.choose(rng).copied() else {
        return 0.0;
    };
    let lib = time_aware_filter(q.subject, q.relation, &snaps[t], q.object);
    let oracle = filter_oracle(&all, t, q.subject, q.relation, q.object);
    if lib == oracle {
        0.0
    } else {
        f64::INFINITY
    }
}

pub fn rank_case(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.gen_range(1..=12);
    let levels = rng.gen_range(1..=4);
    let scores: Vec<f64> = (0..n)
        .map(|_| rng.gen_range(0..levels) as f64 * 0.25)
        .collect();
    let target = rng.gen_range(0..n);
    let excluded: HashSet<usize> = (0..n)
        .filter(|&i| i != target && rng.gen_bool(0.3))
        .collect();
    let mut worst: f64 = 0.0;
    for (tie, optimistic) in [(TieRule::Optimistic, true), (TieRule::Pessimistic, false)] {
        let lib = rank(&scores, target, &excluded, tie).unwrap();
        let oracle = rank_oracle(&scores, target, &excluded, optimistic);
        worst = worst.max((lib as f64 - oracle as f64).abs());
    }
    worst
}

pub fn aggregate_case(rng: &mut ChaCha8Rng) -> f64 {
    let ranks: Vec<usize> = (0..rng.gen_range(0..20))
        .map(|_| rng.gen_range(1..=15))
        .collect();
    let m = aggregate(&ranks);
    let (mrr, h1, h3, h10) = aggregate_oracle(&ranks);
    [m.mrr - mrr, m.hits1 - h1, m.hits3 - h3, m.hits10 - h10]
        .iter()
        .fold(0.0, |a, x| a.max(x.abs()))
}

pub type Check = fn(&mut ChaCha8Rng) -> f64;

pub const ALL: [(&str, Check); 6] = [
    ("conv_stack", conv_case),
    ("rgcn_layer", rgcn_case),
    ("score_all", score_case),
    ("time_aware_filter", filter_case),
    ("rank", rank_case),
    ("aggregate", aggregate_case),
];
