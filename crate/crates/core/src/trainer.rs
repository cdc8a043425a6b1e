//! Offline training with an easy-to-difficult curriculum over history
//! lengths.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::KeyValues;
use crate::data::{Snapshot, Split, TkgDataset, Triple};
use crate::encoder::SkipKind;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions};
use crate::model::{Cen, ModelConfig};
use crate::online::{prox_toward, tr_penalty, Anchor, TrMode};
use crate::optim::{adam_step, clip_global_norm, AdamState};
use crate::params::ParamStore;
use crate::tape::{Activation, Tape};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    /// Maximum history length `K`.
    pub max_len: usize,
    /// Curriculum starting length `k̂`.
    pub min_len: usize,
    pub kernels: usize,
    pub kernel_width: usize,
    pub layers: usize,
    pub dropout: f64,
    pub lr: f64,
    /// Epoch budget per curriculum stage.
    pub epochs: usize,
    pub patience: usize,
    pub grad_clip: f64,
    pub seed: u64,
    pub no_curriculum: bool,
    pub single_channel: bool,
    pub warm_start: bool,
    pub freeze_earlier: bool,
    pub rgcn_activation: Activation,
    pub fcn_activation: Activation,
    pub skip: SkipKind,
    pub inverse_relations: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 200,
            max_len: 10,
            min_len: 3,
            kernels: 50,
            kernel_width: 3,
            layers: 2,
            dropout: 0.2,
            lr: 1e-3,
            epochs: 30,
            patience: 3,
            grad_clip: 1.0,
            seed: 0,
            no_curriculum: false,
            single_channel: false,
            warm_start: true,
            freeze_earlier: false,
            rgcn_activation: Activation::Relu,
            fcn_activation: Activation::Relu,
            skip: SkipKind::Gate,
            inverse_relations: true,
        }
    }
}

impl TrainConfig {
    pub fn apply(&mut self, kv: &mut KeyValues) -> Result<()> {
        kv.take_into("dim", &mut self.dim)?;
        kv.take_into("max_len", &mut self.max_len)?;
        kv.take_into("min_len", &mut self.min_len)?;
        kv.take_into("kernels", &mut self.kernels)?;
        kv.take_into("kernel_width", &mut self.kernel_width)?;
        kv.take_into("layers", &mut self.layers)?;
        kv.take_into("dropout", &mut self.dropout)?;
        kv.take_into("lr", &mut self.lr)?;
        kv.take_into("epochs", &mut self.epochs)?;
        kv.take_into("patience", &mut self.patience)?;
        kv.take_into("grad_clip", &mut self.grad_clip)?;
        kv.take_into("seed", &mut self.seed)?;
        kv.take_into("no_curriculum", &mut self.no_curriculum)?;
        kv.take_into("single_channel", &mut self.single_channel)?;
        kv.take_into("warm_start", &mut self.warm_start)?;
        kv.take_into("freeze_earlier", &mut self.freeze_earlier)?;
        kv.take_into("rgcn_activation", &mut self.rgcn_activation)?;
        kv.take_into("fcn_activation", &mut self.fcn_activation)?;
        kv.take_into("skip", &mut self.skip)?;
        kv.take_into("inverse_relations", &mut self.inverse_relations)?;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "need 1 <= min_len ({}) <= max_len ({})",
                self.min_len, self.max_len
            )));
        }
        if self.kernel_width.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel_width {} must be odd",
                self.kernel_width
            )));
        }
        if self.dim == 0 || self.kernels == 0 || self.layers == 0 || self.patience == 0 {
            return Err(Error::Config("sizes and patience must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.grad_clip > 0.0) {
            return Err(Error::Config("lr must be >= 0 and grad_clip > 0".into()));
        }
        Ok(())
    }

    /// `key = value` lines with every field materialised.
    pub fn to_lines(&self) -> Vec<String> {
        vec![
            format!("dim = {}", self.dim),
            format!("max_len = {}", self.max_len),
            format!("min_len = {}", self.min_len),
            format!("kernels = {}", self.kernels),
            format!("kernel_width = {}", self.kernel_width),
            format!("layers = {}", self.layers),
            format!("dropout = {}", self.dropout),
            format!("lr = {}", self.lr),
            format!("epochs = {}", self.epochs),
            format!("patience = {}", self.patience),
            format!("grad_clip = {}", self.grad_clip),
            format!("seed = {}", self.seed),
            format!("no_curriculum = {}", self.no_curriculum),
            format!("single_channel = {}", self.single_channel),
            format!("warm_start = {}", self.warm_start),
            format!("freeze_earlier = {}", self.freeze_earlier),
            format!("rgcn_activation = {}", self.rgcn_activation),
            format!("fcn_activation = {}", self.fcn_activation),
            format!("skip = {}", self.skip),
            format!("inverse_relations = {}", self.inverse_relations),
        ]
    }

    pub fn model_config(&self, data: &TkgDataset) -> ModelConfig {
        ModelConfig {
            num_entities: data.num_entities,
            num_relations: data.relation_vocab(),
            dim: self.dim,
            layers: self.layers,
            kernels: self.kernels,
            kernel_width: self.kernel_width,
            dropout: self.dropout,
            rgcn_activation: self.rgcn_activation,
            fcn_activation: self.fcn_activation,
            skip: self.skip,
            single_channel: self.single_channel,
        }
    }
}

/// One row of the per-stage training log.
#[derive(Clone, Debug, PartialEq)]
pub struct StageLogRow {
    pub stage: usize,
    pub k: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_mrr: f64,
}

/// Curriculum progress.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CurriculumState {
    pub current_len: usize,
    /// MRR of the last non-decreasing stage.
    pub best_mrr: Option<f64>,
    /// `(k, validation MRR)` per completed stage.
    pub history: Vec<(usize, f64)>,
    chosen: Option<usize>,
}

impl CurriculumState {
    /// The adaptive maximum length, once the curriculum has stopped.
    pub fn chosen_len(&self) -> Option<usize> {
        self.chosen
    }

    fn choose(&mut self, k: usize) {
        assert!(self.chosen.is_none(), "chosen length set twice");
        self.chosen = Some(k);
    }
}

/// Snapshot of the last `k` timestamps before `t`.
pub fn history_window(snapshots: &[Snapshot], t: usize, k: usize) -> &[Snapshot] {
    &snapshots[t.saturating_sub(k)..t]
}

/// One optimisation step on `facts` given `history`. Applies the temporal
/// regularisation term when `anchor` is given. Returns the task loss.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut Cen,
    history: &[Snapshot],
    facts: &[Triple],
    adam: &mut AdamState,
    grad_clip: f64,
    anchor: Option<Anchor<'_>>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape)?;
    let task = model.fact_loss(&mut tape, &bound, history, facts, true, rng)?;
    let task_value = tape.value(task).data()[0];
    let loss = match anchor {
        Some(a) if a.mode == TrMode::Gradient => {
            match tr_penalty(&mut tape, &bound, model.params(), a.params, a.lambda)? {
                Some(p) => tape.add(task, p)?,
                None => task,
            }
        }
        _ => task,
    };
    let mut grads = tape.backward(loss)?.into_named();
    grads.retain(|name, _| model.params().is_trainable(name));
    clip_global_norm(&mut grads, grad_clip);
    adam_step(model.params_mut(), &grads, adam)?;
    if let Some(a) = anchor.filter(|a| a.mode == TrMode::Prox) {
        prox_toward(model.params_mut(), a.params, 2.0 * adam.lr * a.lambda)?;
    }
    Ok(task_value)
}

fn train_times(data: &TkgDataset) -> Vec<usize> {
    data.split_times(Split::Train)
        .filter(|&t| t > 0 && !data.snapshots[t].is_empty())
        .collect()
}

pub fn validation_mrr(model: &Cen, data: &TkgDataset, eval: &EvalOptions) -> Result<f64> {
    if data.split_times(Split::Valid).is_empty() {
        return Err(Error::EmptySplit("valid"));
    }
    Ok(evaluate(model, data, Split::Valid, eval)?.0.overall.mrr)
}

/// Trains `model` at history length `k` and leaves it at the best epoch.
/// Returns that epoch's validation MRR.
#[allow(clippy::too_many_arguments)]
pub fn train_stage(
    model: &mut Cen,
    data: &TkgDataset,
    k: usize,
    cfg: &TrainConfig,
    eval: &EvalOptions,
    rng: &mut ChaCha8Rng,
    stage: usize,
    log: &mut Vec<StageLogRow>,
) -> Result<f64> {
    if k > cfg.max_len {
        return Err(Error::Config(format!(
            "stage length {k} exceeds max_len {}",
            cfg.max_len
        )));
    }
    if model.active_len() != k {
        return Err(Error::Contract(format!(
            "model covers lengths 1..={} but stage needs {k}",
            model.active_len()
        )));
    }
    let times = train_times(data);
    if times.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    let mut adam = AdamState::new(cfg.lr);
    let mut best: Option<(f64, ParamStore)> = None;
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        for &t in &times {
            let history = history_window(&data.snapshots, t, k);
            total += train_step(
                model,
                history,
                &data.snapshots[t].facts,
                &mut adam,
                cfg.grad_clip,
                None,
                rng,
            )?;
        }
        let mrr = validation_mrr(model, data, eval)?;
        let train_loss = total / times.len() as f64;
        log::info!("stage {stage} k={k} epoch {epoch}: loss {train_loss:.4} valid MRR {mrr:.4}");
        log.push(StageLogRow {
            stage,
            k,
            epoch,
            train_loss,
            valid_mrr: mrr,
        });
        if best.as_ref().is_none_or(|(b, _)| mrr > *b) {
            best = Some((mrr, model.params().clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    match best {
        Some((mrr, params)) => {
            *model.params_mut() = params;
            Ok(mrr)
        }
        None => validation_mrr(model, data, eval),
    }
}

/// Grows `model` from length `k` to `k + 1`.
pub fn extend_length(model: &mut Cen, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    model.extend_length(cfg.max_len, cfg.warm_start, rng)?;
    if cfg.freeze_earlier {
        model.freeze_earlier_channels(true)?;
    }
    Ok(())
}

/// The operations the curriculum drives. Separated from the model so the
/// stopping rule can be exercised with scripted validation scores.
pub trait StageRunner {
    type Checkpoint;

    /// Makes the model cover lengths `1..=k` before the first stage.
    fn prepare(&mut self, k: usize) -> Result<()>;
    fn train(&mut self, k: usize) -> Result<f64>;
    /// Adds the channel for length `k + 1`.
    fn extend(&mut self, k: usize) -> Result<()>;
    fn checkpoint(&self) -> Self::Checkpoint;
    fn restore(&mut self, ckpt: Self::Checkpoint);
}

/// Runs stages `k̂, k̂+1, …` and stops at the first stage whose validation
/// MRR is strictly lower than the previous one (restoring that previous
/// stage) or after stage `K`.
pub fn run_curriculum_with<S: StageRunner>(
    runner: &mut S,
    min_len: usize,
    max_len: usize,
    no_curriculum: bool,
) -> Result<CurriculumState> {
    let mut state = CurriculumState::default();
    if no_curriculum {
        runner.prepare(max_len)?;
        state.current_len = max_len;
        let mrr = runner.train(max_len)?;
        state.history.push((max_len, mrr));
        state.best_mrr = Some(mrr);
        state.choose(max_len);
        return Ok(state);
    }
    if min_len == 0 || min_len > max_len {
        return Err(Error::Config(format!(
            "need 1 <= min_len ({min_len}) <= max_len ({max_len})"
        )));
    }
    runner.prepare(min_len)?;
    let mut k = min_len;
    let mut previous: Option<S::Checkpoint> = None;
    loop {
        state.current_len = k;
        let mrr = runner.train(k)?;
        state.history.push((k, mrr));
        if let (Some(prev_mrr), Some(_)) = (state.best_mrr, previous.as_ref()) {
            if mrr < prev_mrr {
                state.choose(k - 1);
                state.current_len = k - 1;
                runner.restore(previous.take().expect("checked"));
                return Ok(state);
            }
        }
        state.best_mrr = Some(mrr);
        if k == max_len {
            state.choose(k);
            return Ok(state);
        }
        previous = Some(runner.checkpoint());
        runner.extend(k)?;
        k += 1;
    }
}

/// [`StageRunner`] over a real model and dataset.
pub struct ModelStages<'a> {
    pub model: Cen,
    pub data: &'a TkgDataset,
    pub cfg: &'a TrainConfig,
    pub eval: EvalOptions,
    pub rng: ChaCha8Rng,
    pub log: Vec<StageLogRow>,
    stage: usize,
}

impl<'a> ModelStages<'a> {
    pub fn new(data: &'a TkgDataset, cfg: &'a TrainConfig, eval: EvalOptions) -> Result<Self> {
        cfg.validate()?;
        let start = if cfg.no_curriculum {
            cfg.max_len
        } else {
            cfg.min_len
        };
        let model = Cen::new(cfg.model_config(data), start, cfg.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(Self {
            model,
            data,
            cfg,
            eval,
            rng,
            log: Vec::new(),
            stage: 0,
        })
    }
}

impl StageRunner for ModelStages<'_> {
    type Checkpoint = Cen;

    fn prepare(&mut self, k: usize) -> Result<()> {
        while self.model.active_len() < k {
            extend_length(&mut self.model, self.cfg, &mut self.rng)?;
        }
        Ok(())
    }

    fn train(&mut self, k: usize) -> Result<f64> {
        self.stage += 1;
        train_stage(
            &mut self.model,
            self.data,
            k,
            self.cfg,
            &self.eval,
            &mut self.rng,
            self.stage,
            &mut self.log,
        )
    }

    fn extend(&mut self, _k: usize) -> Result<()> {
        extend_length(&mut self.model, self.cfg, &mut self.rng)
    }

    fn checkpoint(&self) -> Cen {
        self.model.clone()
    }

    fn restore(&mut self, ckpt: Cen) {
        self.model = ckpt;
    }
}

#[derive(Clone, Debug)]
pub struct CurriculumOutcome {
    pub model: Cen,
    pub state: CurriculumState,
    pub log: Vec<StageLogRow>,
}

/// Trains a model on `data` (which must already carry inverse relations if
/// they are wanted) and returns the selected model.
pub fn run_curriculum(
    data: &TkgDataset,
    cfg: &TrainConfig,
    eval: &EvalOptions,
) -> Result<CurriculumOutcome> {
    let mut stages = ModelStages::new(data, cfg, *eval)?;
    let state = run_curriculum_with(&mut stages, cfg.min_len, cfg.max_len, cfg.no_curriculum)?;
    let mut model = stages.model;
    model.freeze_earlier_channels(false)?;
    Ok(CurriculumOutcome {
        model,
        state,
        log: stages.log,
    })
}
