//! Curriculum and online-learning behaviour on tiny synthetic data.

use cen_core::online::{online_step, run_online, tr_penalty_value, OnlineConfig};
use cen_core::trainer::{run_curriculum_with, validation_mrr, StageRunner};
use cen_core::{
    add_inverse_relations, evaluate, run_curriculum, synth_generate, Cen, EvalOptions, Result,
    Split, SynthConfig, TkgDataset, TrainConfig,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_data(seed: u64) -> TkgDataset {
    let cfg = SynthConfig {
        num_entities: 24,
        num_relations: 6,
        num_timestamps: 16,
        drift_time: Some(10),
        seed,
        ..SynthConfig::with_lags(&[1, 2])
    };
    add_inverse_relations(&synth_generate(&cfg).unwrap().0).unwrap()
}

fn tiny_train(seed: u64) -> TrainConfig {
    TrainConfig {
        dim: 6,
        kernels: 2,
        layers: 1,
        dropout: 0.1,
        lr: 0.01,
        epochs: 2,
        patience: 2,
        min_len: 1,
        max_len: 3,
        seed,
        ..TrainConfig::default()
    }
}

fn tiny_model(seed: u64) -> (TkgDataset, Cen) {
    let data = tiny_data(seed);
    let cfg = tiny_train(seed);
    let out = run_curriculum(&data, &cfg, &EvalOptions::default()).unwrap();
    (data, out.model)
}

/// Scripted validation scores with a reference stopping rule.
struct Scripted {
    scores: Vec<f64>,
    len: usize,
    trained: usize,
}

impl StageRunner for Scripted {
    type Checkpoint = usize;
    fn prepare(&mut self, k: usize) -> Result<()> {
        self.len = k;
        Ok(())
    }
    fn train(&mut self, _k: usize) -> Result<f64> {
        self.trained += 1;
        Ok(self.scores[self.trained - 1])
    }
    fn extend(&mut self, _k: usize) -> Result<()> {
        self.len += 1;
        Ok(())
    }
    fn checkpoint(&self) -> usize {
        self.len
    }
    fn restore(&mut self, c: usize) {
        self.len = c;
    }
}

fn reference_choice(scores: &[f64], min_len: usize) -> usize {
    for i in 1..scores.len() {
        if scores[i] < scores[i - 1] {
            return min_len + i - 1;
        }
    }
    min_len + scores.len() - 1
}

proptest! {
    #[test]
    fn stopping_rule_matches_reference(
        min_len in 1usize..4,
        extra in 0usize..6,
        levels in prop::collection::vec(0u8..4, 10),
    ) {
        let max_len = min_len + extra;
        // Few distinct levels so that ties are common.
        let scores: Vec<f64> = levels.iter().map(|&l| l as f64 / 4.0).collect();
        let mut r = Scripted { scores: scores.clone(), len: 0, trained: 0 };
        let st = run_curriculum_with(&mut r, min_len, max_len, false).unwrap();
        let expected = reference_choice(&scores[..=extra], min_len);
        prop_assert_eq!(st.chosen_len(), Some(expected));
        prop_assert_eq!(r.len, expected);
        prop_assert_eq!(st.current_len, expected);
        let ks: Vec<usize> = st.history.iter().map(|h| h.0).collect();
        prop_assert!(ks.windows(2).all(|w| w[1] == w[0] + 1));
    }
}

#[test]
fn restored_model_reproduces_its_stage_score() {
    let data = tiny_data(3);
    let cfg = tiny_train(3);
    let out = run_curriculum(&data, &cfg, &EvalOptions::default()).unwrap();
    let chosen = out.state.chosen_len().unwrap();
    assert_eq!(out.model.active_len(), chosen);
    let recorded = out.state.history.iter().find(|h| h.0 == chosen).unwrap().1;
    let again = validation_mrr(&out.model, &data, &EvalOptions::default()).unwrap();
    assert!((again - recorded).abs() <= 1e-9, "{again} vs {recorded}");
}

#[test]
fn fixed_seed_training_is_bit_identical() {
    let data = tiny_data(4);
    let cfg = TrainConfig {
        no_curriculum: true,
        ..tiny_train(4)
    };
    let a = run_curriculum(&data, &cfg, &EvalOptions::default()).unwrap();
    let b = run_curriculum(&data, &cfg, &EvalOptions::default()).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.log, b.log);
}

fn online_cfg() -> OnlineConfig {
    OnlineConfig {
        epochs: 2,
        lr: 0.01,
        ..OnlineConfig::default()
    }
}

#[test]
fn zero_epochs_and_lambda_match_offline_evaluation() {
    let (data, model) = tiny_model(5);
    let cfg = OnlineConfig {
        epochs: 0,
        lambda: 0.0,
        ..online_cfg()
    };
    let opts = EvalOptions::default();
    let (_, online) = run_online(&model, &data, &cfg, &opts).unwrap();
    let (offline, results) = evaluate(&model, &data, Split::Test, &opts).unwrap();
    assert_eq!(online.report, offline);
    assert_eq!(online.results, results);
}

#[test]
fn zero_learning_rate_is_a_null_update() {
    let (data, model) = tiny_model(6);
    let cfg = OnlineConfig {
        lr: 0.0,
        ..online_cfg()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (next, report) = online_step(
        &model,
        &data,
        data.train_end + 1,
        &cfg,
        &EvalOptions::default(),
        &mut rng,
    )
    .unwrap();
    assert!(report.epochs_used > 0);
    assert_eq!(next.params(), model.params());
}

#[test]
fn disabling_tr_equals_zero_lambda() {
    let (data, model) = tiny_model(7);
    let opts = EvalOptions::default();
    let a = run_online(
        &model,
        &data,
        &OnlineConfig {
            no_tr: true,
            ..online_cfg()
        },
        &opts,
    )
    .unwrap();
    let b = run_online(
        &model,
        &data,
        &OnlineConfig {
            lambda: 0.0,
            ..online_cfg()
        },
        &opts,
    )
    .unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1.rows, b.1.rows);
}

#[test]
fn huge_lambda_pins_parameters_to_the_anchor() {
    let (data, model) = tiny_model(8);
    let cfg = OnlineConfig {
        lambda: 1e6,
        epochs: 5,
        lr: 1e-3,
        ..online_cfg()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let t = data.train_end + 1;
    let (next, _) = online_step(&model, &data, t, &cfg, &EvalOptions::default(), &mut rng).unwrap();
    let drift = next.params().max_abs_diff(model.params());
    assert!(drift <= 1e-3, "max abs drift {drift}");
    assert!(tr_penalty_value(next.params(), model.params(), 1.0).unwrap() > 0.0);
}

#[test]
fn future_snapshots_do_not_affect_earlier_predictions() {
    let (data, model) = tiny_model(9);
    let opts = EvalOptions::default();
    let cut = data.valid_end + 2;
    let mut altered = data.clone();
    let other = tiny_data(99);
    for t in cut + 1..altered.snapshots.len() {
        altered.snapshots[t].facts = other.snapshots[t].facts.clone();
    }
    let a = run_online(&model, &data, &online_cfg(), &opts).unwrap().1;
    let b = run_online(&model, &altered, &online_cfg(), &opts)
        .unwrap()
        .1;
    let upto = |rows: &[cen_core::online::OnlineRow]| {
        rows.iter()
            .filter(|r| r.time <= cut)
            .map(|r| r.metrics)
            .collect::<Vec<_>>()
    };
    assert!(upto(&a.rows).iter().any(Option::is_some));
    assert_eq!(upto(&a.rows), upto(&b.rows));
}
