//! Naive reference implementations and random case builders shared by the
//! integration tests. Each oracle is written with plain nested loops over
//! `Vec<Vec<f64>>` and shares no code with the library kernels.

#![allow(dead_code)]

use std::collections::HashSet;

use cen_core::{Activation, Snapshot, Triple};
use rand::Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn random_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

pub fn flatten(m: &Mat) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

pub fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Relu => {
            if x > 0.0 {
                x
            } else {
                0.0
            }
        }
        Activation::Tanh => x.tanh(),
        Activation::Identity => x,
    }
}

/// `out[c][j] = Σ_row Σ_m K[c][row][m] · x[row][j + m − pad]`, zero outside.
pub fn conv_oracle(pair: &[Vec<f64>; 2], kernels: &[[Vec<f64>; 2]]) -> Mat {
    let d = pair[0].len() as i64;
    kernels
        .iter()
        .map(|k| {
            let width = k[0].len() as i64;
            let pad = (width - 1) / 2;
            (0..d)
                .map(|j| {
                    let mut acc = 0.0;
                    for row in 0..2 {
                        for m in 0..width {
                            let idx = j + m - pad;
                            if idx >= 0 && idx < d {
                                acc += k[row][m as usize] * pair[row][idx as usize];
                            }
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

fn vec_mat(v: &[f64], w: &Mat) -> Vec<f64> {
    let cols = w[0].len();
    (0..cols)
        .map(|j| (0..v.len()).map(|i| v[i] * w[i][j]).sum())
        .collect()
}

/// One relational propagation step computed entity by entity.
pub fn rgcn_oracle(
    h: &Mat,
    rel: &Mat,
    facts: &[Triple],
    w_msg: &Mat,
    w_self: &Mat,
    a: Activation,
) -> Mat {
    (0..h.len())
        .map(|o| {
            let incoming: Vec<&Triple> = facts.iter().filter(|f| f.object == o).collect();
            let mut pre = vec_mat(&h[o], w_self);
            if !incoming.is_empty() {
                let c = incoming.len() as f64;
                for f in incoming {
                    let msg: Vec<f64> = h[f.subject]
                        .iter()
                        .zip(&rel[f.relation])
                        .map(|(x, y)| x + y)
                        .collect();
                    let contrib = vec_mat(&msg, w_msg);
                    for (p, q) in pre.iter_mut().zip(contrib) {
                        *p += q / c;
                    }
                }
            }
            pre.into_iter().map(|x| act(a, x)).collect()
        })
        .collect()
}

pub struct DecoderCase {
    pub reps: Vec<Mat>,
    pub rel: Mat,
    pub queries: Vec<(usize, usize)>,
    /// Per channel, per kernel: two rows of width `M`.
    pub channels: Vec<Vec<[Vec<f64>; 2]>>,
    pub fc_w: Mat,
    pub fc_b: Vec<f64>,
    pub activation: Activation,
    pub single_channel: bool,
}

/// Logits summed over lengths, one query and one candidate at a time.
pub fn score_oracle(c: &DecoderCase) -> Mat {
    let n = c.reps[0].len();
    c.queries
        .iter()
        .map(|&(s, r)| {
            let mut logits = vec![0.0; n];
            for (k, rep) in c.reps.iter().enumerate() {
                let bank = if c.single_channel {
                    &c.channels[0]
                } else {
                    &c.channels[k]
                };
                let fmap = conv_oracle(&[rep[s].clone(), c.rel[r].clone()], bank);
                let feat: Vec<f64> = fmap.into_iter().flatten().collect();
                let proj: Vec<f64> = vec_mat(&feat, &c.fc_w)
                    .into_iter()
                    .zip(&c.fc_b)
                    .map(|(x, b)| act(c.activation, x + b))
                    .collect();
                for (e, l) in logits.iter_mut().enumerate() {
                    *l += proj.iter().zip(&rep[e]).map(|(x, y)| x * y).sum::<f64>();
                }
            }
            logits
        })
        .collect()
}

/// Alternative true objects at the query's own time, by scanning every
/// timestamped fact.
pub fn filter_oracle(
    all: &[(usize, Triple)],
    t: usize,
    s: usize,
    r: usize,
    target: usize,
) -> HashSet<usize> {
    let mut out = HashSet::new();
    for &(time, f) in all {
        if time == t && f.subject == s && f.relation == r && f.object != target {
            out.insert(f.object);
        }
    }
    out
}

/// Rank by sorting the surviving candidates; the target wins (optimistic)
/// or loses (pessimistic) every tie.
pub fn rank_oracle(
    scores: &[f64],
    target: usize,
    excluded: &HashSet<usize>,
    optimistic: bool,
) -> usize {
    let mut cands: Vec<(f64, bool)> = scores
        .iter()
        .enumerate()
        .filter(|(i, _)| *i == target || !excluded.contains(i))
        .map(|(i, &s)| (s, i == target))
        .collect();
    cands.sort_by(|a, b| {
        b.0.partial_cmp(&a.0).unwrap().then_with(|| {
            if optimistic {
                b.1.cmp(&a.1)
            } else {
                a.1.cmp(&b.1)
            }
        })
    });
    cands.iter().position(|c| c.1).unwrap() + 1
}

/// `(mrr, h1, h3, h10)` accumulated one rank at a time.
pub fn aggregate_oracle(ranks: &[usize]) -> (f64, f64, f64, f64) {
    if ranks.is_empty() {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let (mut rr, mut h1, mut h3, mut h10) = (0.0, 0.0, 0.0, 0.0);
    for &r in ranks {
        rr += 1.0 / r as f64;
        if r == 1 {
            h1 += 1.0;
        }
        if r <= 3 {
            h3 += 1.0;
        }
        if r <= 10 {
            h10 += 1.0;
        }
    }
    let n = ranks.len() as f64;
    (rr / n, h1 / n, h3 / n, h10 / n)
}

pub fn random_snapshot<R: Rng>(
    rng: &mut R,
    time: usize,
    n_ent: usize,
    n_rel: usize,
    max_facts: usize,
) -> Snapshot {
    let n = rng.gen_range(0..=max_facts);
    let mut s = Snapshot::new(
        time,
        (0..n)
            .map(|_| {
                Triple::new(
                    rng.gen_range(0..n_ent),
                    rng.gen_range(0..n_rel),
                    rng.gen_range(0..n_ent),
                )
            })
            .collect(),
    );
    s.dedup();
    s
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub mod checks;
