//! Fixtures shared by the benchmarks.

use cen_core::{Activation, Cen, ModelConfig, SkipKind, Snapshot, Tape, Triple};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sizes of a benchmark graph sequence.
#[derive(Clone, Copy, Debug)]
pub struct Shape {
    pub entities: usize,
    pub relations: usize,
    pub facts_per_snapshot: usize,
    pub dim: usize,
}

impl Default for Shape {
    fn default() -> Self {
        Self {
            entities: 500,
            relations: 20,
            facts_per_snapshot: 1000,
            dim: 64,
        }
    }
}

pub fn snapshots(shape: Shape, count: usize, seed: u64) -> Vec<Snapshot> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|t| {
            let facts = (0..shape.facts_per_snapshot)
                .map(|_| {
                    Triple::new(
                        rng.gen_range(0..shape.entities),
                        rng.gen_range(0..shape.relations),
                        rng.gen_range(0..shape.entities),
                    )
                })
                .collect();
            Snapshot::new(t, facts)
        })
        .collect()
}

pub fn model(shape: Shape, len: usize, seed: u64) -> Cen {
    let cfg = ModelConfig {
        num_entities: shape.entities,
        num_relations: shape.relations,
        dim: shape.dim,
        layers: 2,
        kernels: 8,
        kernel_width: 3,
        dropout: 0.0,
        rgcn_activation: Activation::Relu,
        fcn_activation: Activation::Relu,
        skip: SkipKind::Gate,
        single_channel: false,
    };
    Cen::new(cfg, len, seed).expect("valid benchmark model")
}

/// Forward pass of every length up to the model's active length; returns
/// the tape size so the work cannot be optimized away.
pub fn encode_once(model: &Cen, history: &[Snapshot]) -> usize {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape).expect("bind");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    model
        .encode(&mut tape, &bound, history, false, &mut rng)
        .expect("encode");
    tape.len()
}
