use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Triple;
use crate::decoder::{score_all, DecoderSettings, DecoderVars};
use crate::encoder::{encode_all, EncoderSettings, EncoderVars, SkipKind};
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::params::ParamStore;
use crate::tape::{Activation, Tape, Var};
use crate::tensor::Tensor;

const ENTITY: &str = "entity";
const RELATION: &str = "relation";
const SKIP_W: &str = "skip.w";
const SKIP_B: &str = "skip.b";
const FC_W: &str = "decoder.fc.w";
const FC_B: &str = "decoder.fc.b";
const ACTIVE_LEN: &str = "meta.active_len";

fn layer_msg(l: usize) -> String {
    format!("rgcn.{l}.msg")
}

fn layer_self(l: usize) -> String {
    format!("rgcn.{l}.self")
}

fn channel_name(k: usize) -> String {
    format!("decoder.channel.{k}")
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub num_entities: usize,
    /// Relation vocabulary seen by the model (doubled when inverse relations are used).
    pub num_relations: usize,
    pub dim: usize,
    pub layers: usize,
    /// Kernels per channel (`C`).
    pub kernels: usize,
    /// Kernel width (`M`), odd.
    pub kernel_width: usize,
    pub dropout: f64,
    pub rgcn_activation: Activation,
    pub fcn_activation: Activation,
    pub skip: SkipKind,
    pub single_channel: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_width.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel width {} must be odd",
                self.kernel_width
            )));
        }
        if self.dim == 0
            || self.kernels == 0
            || self.layers == 0
            || self.num_entities == 0
            || self.num_relations == 0
        {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    fn encoder_settings(&self) -> EncoderSettings {
        EncoderSettings {
            activation: self.rgcn_activation,
            skip: self.skip,
            dropout: self.dropout,
        }
    }

    fn decoder_settings(&self) -> DecoderSettings {
        DecoderSettings {
            activation: self.fcn_activation,
            dropout: self.dropout,
            single_channel: self.single_channel,
        }
    }
}

/// Parameters registered on a tape for one forward pass.
#[derive(Debug)]
pub struct Bound {
    pub vars: IndexMap<String, Var>,
    pub encoder: EncoderVars,
    pub decoder: DecoderVars,
}

/// The full encoder–decoder model over history lengths `1..=active_len`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cen {
    cfg: ModelConfig,
    params: ParamStore,
    active_len: usize,
}

impl Cen {
    pub fn new(cfg: ModelConfig, active_len: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if active_len == 0 {
            return Err(Error::Config("history length must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.dim;
        let mut p = ParamStore::new();
        p.insert(
            ENTITY,
            Tensor::xavier(&[cfg.num_entities, d], cfg.num_entities, d, &mut rng),
        )?;
        p.insert(
            RELATION,
            Tensor::xavier(&[cfg.num_relations, d], cfg.num_relations, d, &mut rng),
        )?;
        for l in 0..cfg.layers {
            p.insert(layer_msg(l), Tensor::xavier(&[d, d], d, d, &mut rng))?;
            p.insert(layer_self(l), Tensor::xavier(&[d, d], d, d, &mut rng))?;
        }
        p.insert(SKIP_W, Tensor::xavier(&[d, d], d, d, &mut rng))?;
        p.insert(SKIP_B, Tensor::zeros(&[1, d]))?;
        let banks = if cfg.single_channel { 1 } else { active_len };
        for k in 0..banks {
            p.insert(channel_name(k), Self::fresh_bank(&cfg, &mut rng))?;
        }
        let cd = cfg.kernels * d;
        p.insert(FC_W, Tensor::xavier(&[cd, d], cd, d, &mut rng))?;
        p.insert(FC_B, Tensor::zeros(&[1, d]))?;
        p.insert(ACTIVE_LEN, Tensor::scalar(active_len as f64))?;
        p.set_trainable(ACTIVE_LEN, false)?;
        Ok(Self {
            cfg,
            params: p,
            active_len,
        })
    }

    fn fresh_bank<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Tensor {
        let (c, m) = (cfg.kernels, cfg.kernel_width);
        Tensor::xavier(&[c, 2, m], 2 * m, c * 2 * m, rng)
    }

    /// Rebuilds a model from stored parameters (e.g. a checkpoint).
    pub fn from_params(cfg: ModelConfig, mut params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let active_len = params.expect(ACTIVE_LEN)?.data()[0] as usize;
        params.set_trainable(ACTIVE_LEN, false)?;
        let banks = if cfg.single_channel { 1 } else { active_len };
        let model = Self {
            cfg,
            params,
            active_len,
        };
        let fresh = Self::new(model.cfg.clone(), active_len, 0)?;
        for (name, entry) in fresh.params.iter() {
            let got = model.params.expect(name)?;
            if got.shape() != entry.value.shape() {
                return Err(Error::Shape {
                    op: "Cen::from_params",
                    lhs: entry.value.shape().to_vec(),
                    rhs: got.shape().to_vec(),
                });
            }
        }
        if model.params.len() != fresh.params.len() || model.params.contains(&channel_name(banks)) {
            return Err(Error::Checkpoint(
                "parameter set does not match the configuration".into(),
            ));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Number of history lengths (decoder channels) in use.
    pub fn active_len(&self) -> usize {
        self.active_len
    }

    /// Adds the channel for length `active_len + 1`. With `warm_start` the new
    /// kernels copy the previous channel; otherwise they are freshly initialised.
    pub fn extend_length<R: Rng + ?Sized>(
        &mut self,
        max_len: usize,
        warm_start: bool,
        rng: &mut R,
    ) -> Result<()> {
        let next = self.active_len + 1;
        if next > max_len {
            return Err(Error::Config(format!(
                "cannot extend to length {next} beyond maximum {max_len}"
            )));
        }
        if !self.cfg.single_channel {
            let bank = if warm_start {
                self.params
                    .expect(&channel_name(self.active_len - 1))?
                    .clone()
            } else {
                Self::fresh_bank(&self.cfg, rng)
            };
            self.params.insert(channel_name(next - 1), bank)?;
        }
        self.active_len = next;
        self.params
            .get_mut(ACTIVE_LEN)
            .expect("always present")
            .data_mut()[0] = next as f64;
        Ok(())
    }

    /// Freezes or unfreezes the decoder channels below the newest one.
    pub fn freeze_earlier_channels(&mut self, freeze: bool) -> Result<()> {
        if self.cfg.single_channel {
            return Ok(());
        }
        for k in 0..self.active_len.saturating_sub(1) {
            self.params.set_trainable(&channel_name(k), !freeze)?;
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<Bound> {
        let vars = self.params.register(tape);
        let get = |n: &str| {
            vars.get(n)
                .copied()
                .ok_or_else(|| Error::Contract(format!("missing parameter `{n}`")))
        };
        let encoder = EncoderVars {
            entity: get(ENTITY)?,
            relation: get(RELATION)?,
            layers: (0..self.cfg.layers)
                .map(|l| Ok((get(&layer_msg(l))?, get(&layer_self(l))?)))
                .collect::<Result<_>>()?,
            skip_w: get(SKIP_W)?,
            skip_b: get(SKIP_B)?,
        };
        let banks = if self.cfg.single_channel {
            1
        } else {
            self.active_len
        };
        let decoder = DecoderVars {
            channels: (0..banks)
                .map(|k| get(&channel_name(k)))
                .collect::<Result<_>>()?,
            fc_w: get(FC_W)?,
            fc_b: get(FC_B)?,
        };
        Ok(Bound {
            vars,
            encoder,
            decoder,
        })
    }

    /// Evolutional representations for lengths `1..=active_len`.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        history: &[crate::data::Snapshot],
        train: bool,
        rng: &mut R,
    ) -> Result<Vec<Var>> {
        encode_all(
            tape,
            &bound.encoder,
            self.active_len,
            history,
            &self.cfg.encoder_settings(),
            train,
            rng,
        )
    }

    /// `B×|V|` logits for `(subject, relation)` queries.
    pub fn logits<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        history: &[crate::data::Snapshot],
        queries: &[(usize, usize)],
        train: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let reps = self.encode(tape, bound, history, train, rng)?;
        score_all(
            tape,
            &reps,
            bound.encoder.relation,
            queries,
            &bound.decoder,
            &self.cfg.decoder_settings(),
            train,
            rng,
        )
    }

    /// Mean cross-entropy of predicting each fact's object from its
    /// subject and relation.
    pub fn fact_loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        history: &[crate::data::Snapshot],
        facts: &[Triple],
        train: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let queries: Vec<(usize, usize)> = facts.iter().map(|f| (f.subject, f.relation)).collect();
        let targets: Vec<usize> = facts.iter().map(|f| f.object).collect();
        let logits = self.logits(tape, bound, history, &queries, train, rng)?;
        tape.cross_entropy(logits, &targets)
    }
}

impl Scorer for Cen {
    fn score(
        &self,
        history: &[crate::data::Snapshot],
        queries: &[(usize, usize)],
    ) -> Result<Vec<Vec<f64>>> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bound = self.bind(&mut tape)?;
        let logits = self.logits(&mut tape, &bound, history, queries, false, &mut rng)?;
        let t = tape.value(logits);
        Ok((0..t.rows()).map(|i| t.row(i).to_vec()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_config() -> ModelConfig {
        ModelConfig {
            num_entities: 5,
            num_relations: 4,
            dim: 4,
            layers: 2,
            kernels: 2,
            kernel_width: 3,
            dropout: 0.0,
            rgcn_activation: Activation::Relu,
            fcn_activation: Activation::Relu,
            skip: SkipKind::Gate,
            single_channel: false,
        }
    }

    #[test]
    fn warm_start_copies_previous_bank() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = Cen::new(toy_config(), 1, 3).unwrap();
        m.extend_length(3, true, &mut rng).unwrap();
        assert_eq!(m.active_len(), 2);
        assert_eq!(
            m.params().get("decoder.channel.0"),
            m.params().get("decoder.channel.1")
        );
        m.extend_length(3, false, &mut rng).unwrap();
        assert_ne!(
            m.params().get("decoder.channel.1"),
            m.params().get("decoder.channel.2")
        );
        assert!(matches!(
            m.extend_length(3, true, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn from_params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = Cen::new(toy_config(), 2, 3).unwrap();
        m.extend_length(4, true, &mut rng).unwrap();
        let back = Cen::from_params(toy_config(), m.params().clone()).unwrap();
        assert_eq!(back, m);
        let mut other = toy_config();
        other.dim = 5;
        assert!(Cen::from_params(other, m.params().clone()).is_err());
    }

    #[test]
    fn rejects_even_kernel_width() {
        let mut cfg = toy_config();
        cfg.kernel_width = 2;
        assert!(matches!(Cen::new(cfg, 1, 0), Err(Error::Config(_))));
    }
}
