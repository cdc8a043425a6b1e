//! Synthetic temporal graphs with planted, lag-controlled patterns.
//!
//! A template `(trigger, consequence, lag)` is instantiated by choosing two
//! idle entities `a`, `b`, emitting `(a, trigger, b)` at time `τ` and
//! `(a, consequence, b)` at `τ + lag`. Predicting the consequence therefore
//! requires looking back exactly `lag` snapshots. After the optional drift
//! time the templates rotate their consequence relations.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Snapshot, TkgDataset, Triple};
use crate::config::KeyValues;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatternTemplate {
    pub trigger: usize,
    pub consequence: usize,
    pub lag: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_entities: usize,
    pub num_relations: usize,
    pub num_timestamps: usize,
    pub templates: Vec<PatternTemplate>,
    /// Expected new instances per template per timestamp.
    pub instances_per_step: f64,
    /// Consequences at or after this time use the rotated relation.
    pub drift_time: Option<usize>,
    /// Expected noise facts per planted fact.
    pub noise_rate: f64,
    /// Timestamps an entity stays idle after its consequence fact.
    pub cooldown: usize,
    pub train_frac: f64,
    pub valid_frac: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Templates of the given lags on relation pairs `(2i, 2i + 1)`.
    pub fn with_lags(lags: &[usize]) -> Self {
        let templates = lags
            .iter()
            .enumerate()
            .map(|(i, &lag)| PatternTemplate {
                trigger: 2 * i,
                consequence: 2 * i + 1,
                lag,
            })
            .collect::<Vec<_>>();
        let max_lag = lags.iter().copied().max().unwrap_or(0);
        Self {
            templates,
            cooldown: max_lag,
            ..Self::default()
        }
    }

    /// Reads `key = value` overrides. `lags` takes a comma-separated list and
    /// rebuilds the templates; `drift_time` accepts `none`.
    pub fn apply(&mut self, kv: &mut KeyValues) -> Result<()> {
        if let Some(lags) = kv.take::<String>("lags")? {
            let lags = lags
                .split(',')
                .map(|x| x.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Config(format!("invalid lag list `{lags}`")))?;
            let fresh = Self::with_lags(&lags);
            self.templates = fresh.templates;
            self.cooldown = fresh.cooldown;
        }
        kv.take_into("num_entities", &mut self.num_entities)?;
        kv.take_into("num_relations", &mut self.num_relations)?;
        kv.take_into("num_timestamps", &mut self.num_timestamps)?;
        kv.take_into("instances_per_step", &mut self.instances_per_step)?;
        if let Some(d) = kv.take::<String>("drift_time")? {
            self.drift_time = match d.as_str() {
                "none" => None,
                n => Some(
                    n.parse()
                        .map_err(|_| Error::Config(format!("invalid drift_time `{n}`")))?,
                ),
            };
        }
        kv.take_into("noise_rate", &mut self.noise_rate)?;
        kv.take_into("cooldown", &mut self.cooldown)?;
        kv.take_into("train_frac", &mut self.train_frac)?;
        kv.take_into("valid_frac", &mut self.valid_frac)?;
        kv.take_into("seed", &mut self.seed)?;
        self.validate()
    }

    /// `key = value` lines with every field materialised.
    pub fn to_lines(&self) -> Vec<String> {
        let lags: Vec<String> = self.templates.iter().map(|t| t.lag.to_string()).collect();
        vec![
            format!("num_entities = {}", self.num_entities),
            format!("num_relations = {}", self.num_relations),
            format!("num_timestamps = {}", self.num_timestamps),
            format!("lags = {}", lags.join(",")),
            format!("instances_per_step = {}", self.instances_per_step),
            format!(
                "drift_time = {}",
                self.drift_time
                    .map_or("none".to_string(), |d| d.to_string())
            ),
            format!("noise_rate = {}", self.noise_rate),
            format!("cooldown = {}", self.cooldown),
            format!("train_frac = {}", self.train_frac),
            format!("valid_frac = {}", self.valid_frac),
            format!("seed = {}", self.seed),
        ]
    }

    pub fn max_lag(&self) -> usize {
        self.templates.iter().map(|t| t.lag).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.num_timestamps < 2 {
            return cfg("num_timestamps must be at least 2".into());
        }
        if self.num_entities < 2 || self.num_relations == 0 {
            return cfg("need at least 2 entities and 1 relation".into());
        }
        for (i, t) in self.templates.iter().enumerate() {
            if t.trigger >= self.num_relations || t.consequence >= self.num_relations {
                return cfg(format!(
                    "template {i} uses a relation outside the vocabulary"
                ));
            }
            if t.lag == 0 {
                return cfg(format!("template {i} has lag 0"));
            }
            if t.lag > self.num_timestamps - 1 {
                return cfg(format!(
                    "template {i} lag {} exceeds the horizon of {} timestamps",
                    t.lag, self.num_timestamps
                ));
            }
        }
        if let Some(d) = self.drift_time {
            if d == 0 || d >= self.num_timestamps {
                return cfg(format!(
                    "drift time {d} not strictly inside 0..{}",
                    self.num_timestamps
                ));
            }
        }
        if !(self.noise_rate >= 0.0 && self.instances_per_step >= 0.0) {
            return cfg("rates must be non-negative".into());
        }
        if !(self.train_frac > 0.0
            && self.valid_frac >= 0.0
            && self.train_frac + self.valid_frac <= 1.0)
        {
            return cfg("split fractions must satisfy 0 < train, train + valid <= 1".into());
        }
        Ok(())
    }

    fn noise_relations(&self) -> Vec<usize> {
        let used: HashSet<usize> = self
            .templates
            .iter()
            .flat_map(|t| [t.trigger, t.consequence])
            .collect();
        let free: Vec<usize> = (0..self.num_relations)
            .filter(|r| !used.contains(r))
            .collect();
        if free.is_empty() {
            (0..self.num_relations).collect()
        } else {
            free
        }
    }

    fn consequence_for(&self, template: usize, time: usize) -> usize {
        let shifted = self.drift_time.is_some_and(|d| time >= d);
        let idx = if shifted {
            (template + 1) % self.templates.len()
        } else {
            template
        };
        self.templates[idx].consequence
    }
}

impl Default for SynthConfig {
    /// 200 entities, 10 relations, 120 timestamps, lags 1–4, drift at 80,
    /// 20% noise.
    fn default() -> Self {
        let templates = (1..=4)
            .map(|lag| PatternTemplate {
                trigger: 2 * (lag - 1),
                consequence: 2 * (lag - 1) + 1,
                lag,
            })
            .collect();
        Self {
            num_entities: 200,
            num_relations: 10,
            num_timestamps: 120,
            templates,
            instances_per_step: 2.0,
            drift_time: Some(80),
            noise_rate: 0.2,
            cooldown: 4,
            train_frac: 0.7,
            valid_frac: 0.15,
            seed: 0,
        }
    }
}

/// One planted instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatternInstance {
    pub template: usize,
    pub trigger_time: usize,
    pub consequence_time: usize,
    pub subject: usize,
    pub object: usize,
    pub consequence_relation: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PatternLog {
    pub instances: Vec<PatternInstance>,
}

impl PatternLog {
    /// Writes `template_id<TAB>trigger_time<TAB>consequence_time` lines.
    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for p in &self.instances {
            writeln!(
                w,
                "{}\t{}\t{}",
                p.template, p.trigger_time, p.consequence_time
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// Consequence facts as `(time, triple)`, for restricting evaluation to
    /// predictable queries.
    pub fn consequence_facts(&self) -> HashSet<(usize, Triple)> {
        self.instances
            .iter()
            .map(|p| {
                (
                    p.consequence_time,
                    Triple::new(p.subject, p.consequence_relation, p.object),
                )
            })
            .collect()
    }

    pub fn count_for(&self, template: usize) -> usize {
        self.instances
            .iter()
            .filter(|p| p.template == template)
            .count()
    }
}

fn pick_idle(
    rng: &mut ChaCha8Rng,
    busy_until: &[usize],
    t: usize,
    avoid: Option<usize>,
) -> Option<usize> {
    for _ in 0..64 {
        let e = rng.gen_range(0..busy_until.len());
        if busy_until[e] <= t && Some(e) != avoid {
            return Some(e);
        }
    }
    None
}

fn draw_count(rng: &mut ChaCha8Rng, expected: f64) -> usize {
    let base = expected.floor();
    base as usize + usize::from(rng.gen::<f64>() < expected - base)
}

/// Generates a dataset and the log of every planted instance.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(TkgDataset, PatternLog)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let horizon = cfg.num_timestamps;
    let mut facts: Vec<Vec<Triple>> = vec![Vec::new(); horizon];
    let mut present: Vec<HashSet<Triple>> = vec![HashSet::new(); horizon];
    let mut busy_until = vec![0usize; cfg.num_entities];
    let mut log = PatternLog::default();

    for tau in 0..horizon {
        for (tid, tpl) in cfg.templates.iter().enumerate() {
            let n = draw_count(&mut rng, cfg.instances_per_step);
            if tau + tpl.lag >= horizon {
                continue;
            }
            for _ in 0..n {
                let Some(a) = pick_idle(&mut rng, &busy_until, tau, None) else {
                    continue;
                };
                let Some(b) = pick_idle(&mut rng, &busy_until, tau, Some(a)) else {
                    continue;
                };
                let ct = tau + tpl.lag;
                let cons = cfg.consequence_for(tid, ct);
                for (t, f) in [
                    (tau, Triple::new(a, tpl.trigger, b)),
                    (ct, Triple::new(a, cons, b)),
                ] {
                    if present[t].insert(f) {
                        facts[t].push(f);
                    }
                }
                let until = ct + cfg.cooldown + 1;
                busy_until[a] = until;
                busy_until[b] = until;
                log.instances.push(PatternInstance {
                    template: tid,
                    trigger_time: tau,
                    consequence_time: ct,
                    subject: a,
                    object: b,
                    consequence_relation: cons,
                });
            }
        }
    }

    let noise_rels = cfg.noise_relations();
    for t in 0..horizon {
        let n = draw_count(&mut rng, cfg.noise_rate * facts[t].len() as f64);
        let mut added = 0;
        let mut attempts = 0;
        while added < n && attempts < 64 * (n + 1) {
            attempts += 1;
            let s = rng.gen_range(0..cfg.num_entities);
            let o = rng.gen_range(0..cfg.num_entities);
            let r = noise_rels[rng.gen_range(0..noise_rels.len())];
            let f = Triple::new(s, r, o);
            if s != o && present[t].insert(f) {
                facts[t].push(f);
                added += 1;
            }
        }
    }

    let train_end = ((cfg.train_frac * horizon as f64).round() as usize).clamp(1, horizon) - 1;
    let valid_end = (((cfg.train_frac + cfg.valid_frac) * horizon as f64).round() as usize)
        .clamp(train_end + 1, horizon)
        - 1;
    let data = TkgDataset {
        num_entities: cfg.num_entities,
        num_relations: cfg.num_relations,
        inverse_added: false,
        snapshots: facts
            .into_iter()
            .enumerate()
            .map(|(t, f)| Snapshot::new(t, f))
            .collect(),
        train_end,
        valid_end,
        test_end: horizon - 1,
        granularity: "synthetic step".into(),
    };
    data.validate()?;
    Ok((data, log))
}

/// Replays the log against the data: each instance's trigger and
/// consequence facts must be present at their declared times, separated by
/// the template lag.
pub fn verify_pattern_log(data: &TkgDataset, cfg: &SynthConfig, log: &PatternLog) -> Result<()> {
    let sets: Vec<HashSet<Triple>> = data
        .snapshots
        .iter()
        .map(|s| s.facts.iter().copied().collect())
        .collect();
    for (i, p) in log.instances.iter().enumerate() {
        let tpl = cfg.templates.get(p.template).ok_or_else(|| {
            Error::Contract(format!("instance {i}: unknown template {}", p.template))
        })?;
        if p.consequence_time != p.trigger_time + tpl.lag {
            return Err(Error::Contract(format!("instance {i}: lag mismatch")));
        }
        let trig = Triple::new(p.subject, tpl.trigger, p.object);
        let cons = Triple::new(p.subject, p.consequence_relation, p.object);
        let ok = sets.get(p.trigger_time).is_some_and(|s| s.contains(&trig))
            && sets
                .get(p.consequence_time)
                .is_some_and(|s| s.contains(&cons));
        if !ok {
            return Err(Error::Contract(format!(
                "instance {i}: chain not present in data"
            )));
        }
        if p.consequence_relation != cfg.consequence_for(p.template, p.consequence_time) {
            return Err(Error::Contract(format!(
                "instance {i}: wrong consequence relation"
            )));
        }
    }
    Ok(())
}
