//! Online fine-tuning over a stream of timestamps with an L2 tie to the
//! previous timestamp's parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::KeyValues;
use crate::data::{Split, TkgDataset};
use crate::error::{shape_err, Error, Result};
use crate::eval::{aggregate, rank_times, EvalOptions, Metrics, MetricsReport, RankingResult};
use crate::model::{Bound, Cen};
use crate::optim::AdamState;
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::trainer::{history_window, train_step};

#[derive(Clone, Debug, PartialEq)]
pub struct OnlineConfig {
    /// Maximum fine-tuning epochs per timestamp.
    pub epochs: usize,
    pub lambda: f64,
    pub lr: f64,
    /// Validate on the snapshot this many steps before the current one.
    pub val_offset: usize,
    pub no_tr: bool,
    /// Stop a timestamp's fine-tuning after this many epochs without a
    /// validation improvement. `None` runs every epoch.
    pub patience: Option<usize>,
    pub grad_clip: f64,
    pub tr_mode: TrMode,
    pub seed: u64,
}

/// How the tie to the anchor enters an update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrMode {
    /// Exact proximal step on the penalty after each optimiser step.
    Prox,
    /// Penalty added to the loss and differentiated with it.
    Gradient,
}

impl std::str::FromStr for TrMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prox" => Ok(Self::Prox),
            "gradient" => Ok(Self::Gradient),
            _ => Err(Error::Config(format!(
                "unknown tr_mode `{s}` (expected prox or gradient)"
            ))),
        }
    }
}

impl std::fmt::Display for TrMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Prox => "prox",
            Self::Gradient => "gradient",
        })
    }
}

/// Parameters an update is tied to, with the tie's weight.
#[derive(Clone, Copy, Debug)]
pub struct Anchor<'a> {
    pub params: &'a ParamStore,
    pub lambda: f64,
    pub mode: TrMode,
}

/// Minimiser of `|x - θ|²/2 + (c/2)|x - anchor|²` for every trainable
/// entry: `x = (θ + c·anchor) / (1 + c)`.
pub fn prox_toward(live: &mut ParamStore, anchor: &ParamStore, c: f64) -> Result<()> {
    if c == 0.0 {
        return Ok(());
    }
    let names: Vec<String> = live.trainable().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let a = anchor.expect(&name)?;
        let t = live.get_mut(&name).expect("name from live store");
        if t.shape() != a.shape() {
            return shape_err("prox_toward", t.shape(), a.shape());
        }
        for (x, &y) in t.data_mut().iter_mut().zip(a.data()) {
            *x = (*x + c * y) / (1.0 + c);
        }
    }
    Ok(())
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lambda: 1e-2,
            lr: 1e-3,
            val_offset: 2,
            no_tr: false,
            patience: None,
            grad_clip: 1.0,
            tr_mode: TrMode::Prox,
            seed: 0,
        }
    }
}

impl OnlineConfig {
    pub fn apply(&mut self, kv: &mut KeyValues) -> Result<()> {
        kv.take_into("online_epochs", &mut self.epochs)?;
        kv.take_into("lambda", &mut self.lambda)?;
        kv.take_into("online_lr", &mut self.lr)?;
        kv.take_into("val_offset", &mut self.val_offset)?;
        kv.take_into("no_tr", &mut self.no_tr)?;
        if let Some(p) = kv.take::<usize>("online_patience")? {
            self.patience = Some(p);
        }
        kv.take_into("online_grad_clip", &mut self.grad_clip)?;
        kv.take_into("tr_mode", &mut self.tr_mode)?;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "lambda {} must be finite and >= 0",
                self.lambda
            )));
        }
        if self.val_offset == 0 {
            return Err(Error::Config("val_offset must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.grad_clip > 0.0) {
            return Err(Error::Config(
                "online lr must be >= 0 and grad clip > 0".into(),
            ));
        }
        if self.patience == Some(0) {
            return Err(Error::Config("online patience must be positive".into()));
        }
        Ok(())
    }

    /// Weight actually applied to the penalty.
    pub fn effective_lambda(&self) -> f64 {
        if self.no_tr {
            0.0
        } else {
            self.lambda
        }
    }

    pub fn to_lines(&self) -> Vec<String> {
        let mut v = vec![
            format!("online_epochs = {}", self.epochs),
            format!("lambda = {}", self.lambda),
            format!("online_lr = {}", self.lr),
            format!("val_offset = {}", self.val_offset),
            format!("no_tr = {}", self.no_tr),
            format!("online_grad_clip = {}", self.grad_clip),
            format!("tr_mode = {}", self.tr_mode),
        ];
        if let Some(p) = self.patience {
            v.push(format!("online_patience = {p}"));
        }
        v
    }
}

/// `λ Σ (θ − θ_anchor)²` over the trainable entries of `live`, built on the
/// tape. Returns `None` when `λ = 0`.
pub fn tr_penalty(
    tape: &mut Tape,
    bound: &Bound,
    live: &ParamStore,
    anchor: &ParamStore,
    lambda: f64,
) -> Result<Option<Var>> {
    if lambda == 0.0 {
        return Ok(None);
    }
    let mut total: Option<Var> = None;
    for (name, _) in live.trainable() {
        let a = anchor.expect(name)?;
        let v = *bound
            .vars
            .get(name)
            .ok_or_else(|| Error::Contract(format!("parameter `{name}` is not bound")))?;
        let d = tape.sq_dist(v, a)?;
        total = Some(match total {
            None => d,
            Some(t) => tape.add(t, d)?,
        });
    }
    Ok(total.map(|t| tape.scale(t, lambda)))
}

/// Value of the penalty without a tape.
pub fn tr_penalty_value(live: &ParamStore, anchor: &ParamStore, lambda: f64) -> Result<f64> {
    let mut sum = 0.0;
    for (name, t) in live.trainable() {
        let a = anchor.expect(name)?;
        if a.shape() != t.shape() {
            return shape_err("tr_penalty", t.shape(), a.shape());
        }
        sum += t
            .data()
            .iter()
            .zip(a.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>();
    }
    Ok(lambda * sum)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub time: usize,
    /// Snapshot used for checkpoint selection, if any.
    pub valid_time: Option<usize>,
    pub epochs_used: usize,
    pub best_epoch: usize,
    pub valid_mrr: Option<f64>,
    pub train_loss: f64,
}

/// Snapshot used to validate the fine-tuning at `t`.
pub fn validation_time(data: &TkgDataset, t: usize, offset: usize) -> Option<usize> {
    if t > offset {
        return Some(t - offset);
    }
    let last_train = *data.split_times(Split::Train).end();
    if last_train >= 1 && last_train < t {
        log::info!(
            "t={t}: validation offset reaches before the history; using snapshot {last_train}"
        );
        Some(last_train)
    } else {
        log::info!("t={t}: no usable validation snapshot; keeping the last epoch");
        None
    }
}

fn snapshot_mrr(model: &Cen, data: &TkgDataset, t: usize, eval: &EvalOptions) -> Result<f64> {
    let results = rank_times(model, data, &[t], &|_, _| true, eval)?;
    Ok(aggregate(&results.iter().map(|r| r.rank).collect::<Vec<_>>()).mrr)
}

/// Fine-tunes `model` on the facts at `t` and returns the epoch checkpoint
/// with the best validation MRR. With zero epochs the model is returned as is.
pub fn online_step(
    model: &Cen,
    data: &TkgDataset,
    t: usize,
    cfg: &OnlineConfig,
    eval: &EvalOptions,
    rng: &mut ChaCha8Rng,
) -> Result<(Cen, StepReport)> {
    if t == 0 || t >= data.snapshots.len() {
        return Err(Error::Index {
            what: "online timestamp",
            index: t,
            size: data.snapshots.len(),
        });
    }
    let facts = &data.snapshots[t].facts;
    let valid_time = validation_time(data, t, cfg.val_offset);
    let mut report = StepReport {
        time: t,
        valid_time,
        epochs_used: 0,
        best_epoch: 0,
        valid_mrr: None,
        train_loss: 0.0,
    };
    if cfg.epochs == 0 || facts.is_empty() {
        return Ok((model.clone(), report));
    }
    let anchor = model.params().clone();
    let lambda = cfg.effective_lambda();
    let history = history_window(&data.snapshots, t, model.active_len());
    let mut live = model.clone();
    let mut adam = AdamState::new(cfg.lr);
    let mut best: Option<(f64, Cen)> = None;
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        let anchor_arg = (lambda > 0.0).then_some(Anchor {
            params: &anchor,
            lambda,
            mode: cfg.tr_mode,
        });
        report.train_loss = train_step(
            &mut live,
            history,
            facts,
            &mut adam,
            cfg.grad_clip,
            anchor_arg,
            rng,
        )?;
        report.epochs_used = epoch;
        let Some(v) = valid_time else { continue };
        let mrr = snapshot_mrr(&live, data, v, eval)?;
        if best.as_ref().is_none_or(|(b, _)| mrr > *b) {
            best = Some((mrr, live.clone()));
            report.best_epoch = epoch;
            report.valid_mrr = Some(mrr);
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience.is_some_and(|p| stale >= p) {
                break;
            }
        }
    }
    match best {
        Some((_, m)) => Ok((m, report)),
        None => {
            report.best_epoch = report.epochs_used;
            Ok((live, report))
        }
    }
}

/// Per-timestamp record of an online run. Metrics are present only for
/// test timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct OnlineRow {
    pub time: usize,
    pub metrics: Option<Metrics>,
    pub step: StepReport,
}

#[derive(Clone, Debug)]
pub struct OnlineReport {
    pub rows: Vec<OnlineRow>,
    pub report: MetricsReport,
    pub results: Vec<RankingResult>,
}

/// Streams over every timestamp after training. Each test timestamp is
/// predicted before the model is updated on it.
pub fn run_online(
    pretrained: &Cen,
    data: &TkgDataset,
    cfg: &OnlineConfig,
    eval: &EvalOptions,
) -> Result<(Cen, OnlineReport)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let train_end = *data.split_times(Split::Train).end();
    let test = data.split_times(Split::Test);
    let mut model = pretrained.clone();
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for t in train_end + 1..data.snapshots.len() {
        let metrics = if test.contains(&t) {
            let r = rank_times(&model, data, &[t], &|_, _| true, eval)?;
            let m = aggregate(&r.iter().map(|x| x.rank).collect::<Vec<_>>());
            results.extend(r);
            Some(m)
        } else {
            None
        };
        let (next, step) = online_step(&model, data, t, cfg, eval, &mut rng)?;
        log::info!(
            "online t={t}: epochs {} best {} valid MRR {:?}",
            step.epochs_used,
            step.best_epoch,
            step.valid_mrr
        );
        model = next;
        rows.push(OnlineRow {
            time: t,
            metrics,
            step,
        });
    }
    let report = MetricsReport::from_results(&results, data.num_relations);
    Ok((
        model,
        OnlineReport {
            rows,
            report,
            results,
        },
    ))
}
