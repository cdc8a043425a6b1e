//! KG-sequence encoder: a shared relational GCN stack plus a gated skip
//! connection, unrolled over the latest `k` snapshots for each `k`.

use rand::Rng;

use crate::data::Snapshot;
use crate::error::{shape_err, Error, Result};
use crate::tape::{Activation, Tape, Var};

/// How the RGCN output is merged with the previous state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkipKind {
    /// `U = σ(H_prev·W + b)`, `out = U ⊙ Ĥ + (1 − U) ⊙ H_prev`
    Gate,
    /// `out = Ĥ + H_prev`
    Additive,
}

impl std::str::FromStr for SkipKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gate" => Ok(Self::Gate),
            "additive" => Ok(Self::Additive),
            other => Err(Error::Config(format!("unknown skip connection `{other}`"))),
        }
    }
}

impl std::fmt::Display for SkipKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gate => "gate",
            Self::Additive => "additive",
        })
    }
}

/// Tape handles of the encoder parameters. Layer weights right-multiply
/// row-vector representations.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub entity: Var,
    pub relation: Var,
    /// `(message weight, self-loop weight)` per stacked layer.
    pub layers: Vec<(Var, Var)>,
    pub skip_w: Var,
    pub skip_b: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderSettings {
    pub activation: Activation,
    pub skip: SkipKind,
    pub dropout: f64,
}

/// Edge lists of a snapshot with `1 / in-degree` weights.
struct Edges {
    src: Vec<usize>,
    rel: Vec<usize>,
    dst: Vec<usize>,
    weight: Vec<f64>,
}

fn edges(g: &Snapshot, num_entities: usize) -> Edges {
    let mut indeg = vec![0usize; num_entities];
    for f in &g.facts {
        indeg[f.object] += 1;
    }
    Edges {
        src: g.facts.iter().map(|f| f.subject).collect(),
        rel: g.facts.iter().map(|f| f.relation).collect(),
        dst: g.facts.iter().map(|f| f.object).collect(),
        weight: g
            .facts
            .iter()
            .map(|f| 1.0 / indeg[f.object] as f64)
            .collect(),
    }
}

/// One propagation layer:
/// `h'_o = act( (1/c_o) Σ_{(s,r,o)} (h_s + r)·W_msg + h_o·W_self )`.
pub fn rgcn_layer(
    tape: &mut Tape,
    h: Var,
    relation: Var,
    g: &Snapshot,
    w_msg: Var,
    w_self: Var,
    act: Activation,
) -> Result<Var> {
    let n = tape.value(h).rows();
    let self_term = tape.matmul(h, w_self)?;
    let pre = if g.is_empty() {
        self_term
    } else {
        let e = edges(g, n);
        let hs = tape.gather_rows(h, &e.src)?;
        let rs = tape.gather_rows(relation, &e.rel)?;
        let msg = tape.add(hs, rs)?;
        let agg = tape.segment_sum(msg, &e.dst, &e.weight, n)?;
        let msg_term = tape.matmul(agg, w_msg)?;
        tape.add(msg_term, self_term)?
    };
    Ok(tape.activate(pre, act))
}

/// The full layer stack with dropout after each layer in train mode.
pub fn rgcn_stack<R: Rng + ?Sized>(
    tape: &mut Tape,
    h: Var,
    vars: &EncoderVars,
    g: &Snapshot,
    settings: &EncoderSettings,
    train: bool,
    rng: &mut R,
) -> Result<Var> {
    let mut x = h;
    for &(w_msg, w_self) in &vars.layers {
        x = rgcn_layer(
            tape,
            x,
            vars.relation,
            g,
            w_msg,
            w_self,
            settings.activation,
        )?;
        x = tape.dropout(x, settings.dropout, train, rng)?;
    }
    Ok(x)
}

pub fn skip_connection(
    tape: &mut Tape,
    h_hat: Var,
    h_prev: Var,
    w: Var,
    b: Var,
    kind: SkipKind,
) -> Result<Var> {
    if tape.shape(h_hat) != tape.shape(h_prev) {
        return shape_err("skip_connection", tape.shape(h_hat), tape.shape(h_prev));
    }
    match kind {
        SkipKind::Additive => tape.add(h_hat, h_prev),
        SkipKind::Gate => {
            let lin = tape.matmul(h_prev, w)?;
            let lin = tape.add_row(lin, b)?;
            let gate = tape.sigmoid(lin);
            let diff = tape.sub(h_hat, h_prev)?;
            let gated = tape.mul(gate, diff)?;
            tape.add(h_prev, gated)
        }
    }
}

/// Encodes `snapshots` (oldest first) starting from the initial entity
/// matrix and returns the representation at the query time.
pub fn encode_sequence<R: Rng + ?Sized>(
    tape: &mut Tape,
    vars: &EncoderVars,
    snapshots: &[Snapshot],
    settings: &EncoderSettings,
    train: bool,
    rng: &mut R,
) -> Result<Var> {
    if snapshots.is_empty() {
        return Err(Error::Contract(
            "encode_sequence needs at least one snapshot".into(),
        ));
    }
    let mut state = vars.entity;
    for g in snapshots {
        let h_hat = rgcn_stack(tape, state, vars, g, settings, train, rng)?;
        state = skip_connection(tape, h_hat, state, vars.skip_w, vars.skip_b, settings.skip)?;
    }
    Ok(state)
}

/// Representations for lengths `1..=max_len` from `history` (all snapshots
/// before the query, oldest first). Lengths beyond the available history
/// reuse the longest one.
pub fn encode_all<R: Rng + ?Sized>(
    tape: &mut Tape,
    vars: &EncoderVars,
    max_len: usize,
    history: &[Snapshot],
    settings: &EncoderSettings,
    train: bool,
    rng: &mut R,
) -> Result<Vec<Var>> {
    if history.is_empty() {
        return Err(Error::Contract(
            "encode_all needs a non-empty history".into(),
        ));
    }
    let mut reps: Vec<Var> = Vec::with_capacity(max_len);
    for k in 1..=max_len {
        if k > history.len() {
            let last = *reps.last().expect("history non-empty");
            reps.push(last);
            continue;
        }
        let window = &history[history.len() - k..];
        reps.push(encode_sequence(tape, vars, window, settings, train, rng)?);
    }
    Ok(reps)
}
