//! Length-aware convolutional decoder: one kernel bank per history length,
//! a shared fully connected projection, and logits summed over channels.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{Activation, Tape, Var};

#[derive(Clone, Debug)]
pub struct DecoderVars {
    /// Kernel bank (`C×2×M`) per channel.
    pub channels: Vec<Var>,
    /// `(C·d)×d`
    pub fc_w: Var,
    pub fc_b: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderSettings {
    pub activation: Activation,
    pub dropout: f64,
    /// Apply channel 0 to every length (the traditional single-CNN decoder).
    pub single_channel: bool,
}

impl DecoderVars {
    fn bank(&self, k: usize, single: bool) -> Result<Var> {
        let idx = if single { 0 } else { k };
        self.channels.get(idx).copied().ok_or(Error::Index {
            what: "decoder channel",
            index: idx,
            size: self.channels.len(),
        })
    }
}

/// `B×(C·d)` features of the stacked pairs `[s_b; r_b]` under channel `k`.
pub fn channel_features(
    tape: &mut Tape,
    s: Var,
    r: Var,
    k: usize,
    dec: &DecoderVars,
    single: bool,
) -> Result<Var> {
    let bank = dec.bank(k, single)?;
    tape.conv_pairs(s, r, bank)
}

/// Per-channel logit contribution `act(m^k·W3 + b3) · (H^k)ᵀ`.
#[allow(clippy::too_many_arguments)]
pub fn channel_logits<R: Rng + ?Sized>(
    tape: &mut Tape,
    rep: Var,
    relation: Var,
    queries: &[(usize, usize)],
    k: usize,
    dec: &DecoderVars,
    settings: &DecoderSettings,
    train: bool,
    rng: &mut R,
) -> Result<Var> {
    let subjects: Vec<usize> = queries.iter().map(|q| q.0).collect();
    let relations: Vec<usize> = queries.iter().map(|q| q.1).collect();
    let s = tape.gather_rows(rep, &subjects)?;
    let r = tape.gather_rows(relation, &relations)?;
    let feat = channel_features(tape, s, r, k, dec, settings.single_channel)?;
    let feat = tape.dropout(feat, settings.dropout, train, rng)?;
    let proj = tape.matmul(feat, dec.fc_w)?;
    let proj = tape.add_row(proj, dec.fc_b)?;
    let proj = tape.activate(proj, settings.activation);
    tape.matmul_nt(proj, rep)
}

/// `B×|V|` logits: the sum over channels of [`channel_logits`].
#[allow(clippy::too_many_arguments)]
pub fn score_all<R: Rng + ?Sized>(
    tape: &mut Tape,
    reps: &[Var],
    relation: Var,
    queries: &[(usize, usize)],
    dec: &DecoderVars,
    settings: &DecoderSettings,
    train: bool,
    rng: &mut R,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (k, &rep) in reps.iter().enumerate() {
        let l = channel_logits(tape, rep, relation, queries, k, dec, settings, train, rng)?;
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
    }
    total.ok_or_else(|| Error::Contract("score_all needs at least one representation".into()))
}
