use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub value: Tensor,
    pub trainable: bool,
}

/// Named model parameters in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: IndexMap<String, ParamEntry>,
}

/// Gradient (or any per-parameter tensor) keyed by parameter name.
pub type GradMap = IndexMap<String, Tensor>;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(
            name,
            ParamEntry {
                value,
                trainable: true,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|e| &mut e.value)
    }

    pub fn expect(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))?;
        e.trainable = trainable;
        Ok(())
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|e| e.trainable)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries
            .iter()
            .filter(|(_, e)| e.trainable)
            .map(|(k, e)| (k.as_str(), &e.value))
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// Registers every entry on `tape`. Trainable entries become named
    /// parameters; frozen ones become constants.
    pub fn register(&self, tape: &mut Tape) -> IndexMap<String, Var> {
        self.entries
            .iter()
            .map(|(name, e)| {
                let v = if e.trainable {
                    tape.param(name, e.value.clone())
                } else {
                    tape.constant(e.value.clone())
                };
                (name.clone(), v)
            })
            .collect()
    }

    /// Largest absolute elementwise difference against a store with the same layout.
    pub fn max_abs_diff(&self, other: &ParamStore) -> f64 {
        self.entries
            .iter()
            .filter_map(|(k, e)| other.get(k).map(|o| e.value.max_abs_diff(o)))
            .fold(0.0, f64::max)
    }
}
