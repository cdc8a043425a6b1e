use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::params::{GradMap, ParamStore};

/// Adam moments and hyperparameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: IndexMap<String, Vec<f64>>,
    second: IndexMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: IndexMap::new(),
            second: IndexMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of every trainable entry of `params`.
///
/// `grads` must hold a gradient for each trainable entry and for nothing
/// else; frozen entries are left untouched.
pub fn adam_step(params: &mut ParamStore, grads: &GradMap, state: &mut AdamState) -> Result<()> {
    let trainable: Vec<String> = params.trainable().map(|(n, _)| n.to_string()).collect();
    for name in &trainable {
        let g = grads.get(name).ok_or_else(|| {
            Error::Contract(format!("no gradient for trainable parameter `{name}`"))
        })?;
        let p = params.expect(name)?;
        if g.shape() != p.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    if let Some(extra) = grads.keys().find(|k| !params.is_trainable(k)) {
        return Err(Error::Contract(format!(
            "gradient for non-trainable parameter `{extra}`"
        )));
    }

    state.step += 1;
    let t = state.step as f64;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powf(t);
    let bc2 = 1.0 - b2.powf(t);
    for name in &trainable {
        let g = grads[name].data();
        let p = params.get_mut(name).expect("checked above").data_mut();
        let m = state
            .first
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; g.len()]);
        let v = state
            .second
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; g.len()]);
        for i in 0..g.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut GradMap, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|t| t.data().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for t in grads.values_mut() {
            t.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}
