use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Snapshot, Triple};
use crate::encoder::SkipKind;
use crate::error::Result;
use crate::model::{Cen, ModelConfig};
use crate::online::tr_penalty;
use crate::params::{GradMap, ParamStore};
use crate::tape::{Activation, Tape};

/// Relative error with an absolute floor so near-zero gradients compare on
/// an absolute scale.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares `analytic` gradients against central finite differences of
/// `loss_fn` for every trainable scalar of `params`.
pub fn grad_check<F>(
    mut loss_fn: F,
    params: &ParamStore,
    analytic: &GradMap,
    eps: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let names: Vec<String> = params.trainable().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let n = params.expect(&name)?.len();
        for i in 0..n {
            let orig = params.expect(&name)?.data()[i];
            probe.get_mut(&name).expect("cloned").data_mut()[i] = orig + eps;
            let plus = loss_fn(&probe)?;
            probe.get_mut(&name).expect("cloned").data_mut()[i] = orig - eps;
            let minus = loss_fn(&probe)?;
            probe.get_mut(&name).expect("cloned").data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(&name).map_or(0.0, |t| t.data()[i]);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

/// A small random model, history and batch for gradient checks.
#[derive(Clone, Debug)]
pub struct ToyInstance {
    pub model: Cen,
    pub history: Vec<Snapshot>,
    pub facts: Vec<Triple>,
    pub anchor: ParamStore,
    pub lambda: f64,
}

impl ToyInstance {
    /// `|V| ≤ 8`, `d ≤ 6`, `K ≤ 3`, `C ≤ 3`, `M = 3`, dropout off.
    pub fn random(seed: u64, activation: Activation) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let num_entities = rng.gen_range(3..=8);
        let num_relations = rng.gen_range(1..=3);
        let cfg = ModelConfig {
            num_entities,
            num_relations: 2 * num_relations,
            dim: rng.gen_range(2..=6),
            layers: rng.gen_range(1..=2),
            kernels: rng.gen_range(1..=3),
            kernel_width: 3,
            dropout: 0.0,
            rgcn_activation: activation,
            fcn_activation: activation,
            skip: SkipKind::Gate,
            single_channel: false,
        };
        let len = rng.gen_range(1..=3);
        let mut model = Cen::new(cfg.clone(), 1, rng.gen())?;
        while model.active_len() < len {
            model.extend_length(len, false, &mut rng)?;
        }
        let fact = |rng: &mut ChaCha8Rng| {
            Triple::new(
                rng.gen_range(0..num_entities),
                rng.gen_range(0..cfg.num_relations),
                rng.gen_range(0..num_entities),
            )
        };
        let history = (0..rng.gen_range(1..=4))
            .map(|t| {
                let n = rng.gen_range(0..=6);
                let mut s = Snapshot::new(t, (0..n).map(|_| fact(&mut rng)).collect());
                s.dedup();
                s
            })
            .collect();
        let facts = (0..rng.gen_range(1..=4)).map(|_| fact(&mut rng)).collect();
        let mut anchor = model.params().clone();
        let names: Vec<String> = anchor.names().map(str::to_string).collect();
        for name in names {
            for x in anchor.get_mut(&name).expect("listed").data_mut() {
                *x += rng.gen_range(-0.1..0.1);
            }
        }
        Ok(Self {
            model,
            history,
            facts,
            anchor,
            lambda: rng.gen_range(0.01..1.0),
        })
    }

    /// Loss (task plus penalty) at `params`.
    pub fn loss_at(&self, params: &ParamStore) -> Result<f64> {
        let model = Cen::from_params(self.model.config().clone(), params.clone())?;
        Ok(self.loss_and_grads(&model, false)?.0)
    }

    fn loss_and_grads(&self, model: &Cen, grads: bool) -> Result<(f64, GradMap)> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape)?;
        let task = model.fact_loss(
            &mut tape,
            &bound,
            &self.history,
            &self.facts,
            false,
            &mut rng,
        )?;
        let loss = match tr_penalty(&mut tape, &bound, model.params(), &self.anchor, self.lambda)? {
            Some(p) => tape.add(task, p)?,
            None => task,
        };
        let value = tape.value(loss).data()[0];
        if !grads {
            return Ok((value, GradMap::new()));
        }
        Ok((value, tape.backward(loss)?.into_named()))
    }

    /// Analytic gradients compared against central differences.
    pub fn check(&self, eps: f64) -> Result<GradCheckReport> {
        let (_, analytic) = self.loss_and_grads(&self.model, true)?;
        grad_check(|p| self.loss_at(p), self.model.params(), &analytic, eps)
    }
}
