//! Temporal knowledge graph data: facts, snapshots, splits.

mod loader;
mod synth;

pub use loader::{load_quadruples, save_dataset};
pub use synth::{
    synth_generate, verify_pattern_log, PatternInstance, PatternLog, PatternTemplate, SynthConfig,
};

use std::ops::RangeInclusive;

use crate::error::{Error, Result};

/// A timestamped fact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Quadruple {
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
    pub time: usize,
}

/// A fact without its timestamp; the time lives on the enclosing [`Snapshot`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
}

impl Triple {
    pub fn new(subject: usize, relation: usize, object: usize) -> Self {
        Self {
            subject,
            relation,
            object,
        }
    }
}

/// All facts sharing one time index.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Snapshot {
    pub time: usize,
    pub facts: Vec<Triple>,
}

impl Snapshot {
    pub fn new(time: usize, facts: Vec<Triple>) -> Self {
        Self { time, facts }
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    /// Removes duplicate triples, keeping first occurrences in order.
    /// Returns the number removed.
    pub fn dedup(&mut self) -> usize {
        let mut seen = std::collections::HashSet::with_capacity(self.facts.len());
        let before = self.facts.len();
        self.facts.retain(|f| seen.insert(*f));
        before - self.facts.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "valid" => Ok(Self::Valid),
            "test" => Ok(Self::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Time-ordered snapshots with split boundaries.
///
/// Train covers times `0..=train_end`, valid `(train_end, valid_end]`, test
/// `(valid_end, test_end]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TkgDataset {
    pub num_entities: usize,
    /// Relation count before inverse augmentation.
    pub num_relations: usize,
    pub inverse_added: bool,
    pub snapshots: Vec<Snapshot>,
    pub train_end: usize,
    pub valid_end: usize,
    pub test_end: usize,
    pub granularity: String,
}

impl TkgDataset {
    /// Size of the relation vocabulary the model sees.
    pub fn relation_vocab(&self) -> usize {
        if self.inverse_added {
            2 * self.num_relations
        } else {
            self.num_relations
        }
    }

    pub fn split_times(&self, split: Split) -> RangeInclusive<usize> {
        match split {
            Split::Train => 0..=self.train_end,
            Split::Valid => self.train_end + 1..=self.valid_end,
            Split::Test => self.valid_end + 1..=self.test_end,
        }
    }

    pub fn split_fact_count(&self, split: Split) -> usize {
        self.split_times(split)
            .filter_map(|t| self.snapshots.get(t))
            .map(Snapshot::len)
            .sum()
    }

    pub fn num_facts(&self) -> usize {
        self.snapshots.iter().map(Snapshot::len).sum()
    }

    pub fn quadruples(&self) -> impl Iterator<Item = Quadruple> + '_ {
        self.snapshots.iter().flat_map(|s| {
            s.facts.iter().map(move |f| Quadruple {
                subject: f.subject,
                relation: f.relation,
                object: f.object,
                time: s.time,
            })
        })
    }

    /// Checks id ranges, dense time indices, split ordering and uniqueness.
    pub fn validate(&self) -> Result<()> {
        let rel_vocab = self.relation_vocab();
        for (i, s) in self.snapshots.iter().enumerate() {
            if s.time != i {
                return Err(Error::Contract(format!("snapshot {i} has time {}", s.time)));
            }
            let mut seen = std::collections::HashSet::new();
            for f in &s.facts {
                if f.subject >= self.num_entities || f.object >= self.num_entities {
                    return Err(Error::Index {
                        what: "entity",
                        index: f.subject.max(f.object),
                        size: self.num_entities,
                    });
                }
                if f.relation >= rel_vocab {
                    return Err(Error::Index {
                        what: "relation",
                        index: f.relation,
                        size: rel_vocab,
                    });
                }
                if !seen.insert(*f) {
                    return Err(Error::Contract(format!("duplicate fact {f:?} at time {i}")));
                }
            }
        }
        if !(self.train_end <= self.valid_end && self.valid_end <= self.test_end) {
            return Err(Error::Contract("split boundaries out of order".into()));
        }
        if self.test_end + 1 != self.snapshots.len() {
            return Err(Error::Contract(format!(
                "test_end {} does not match {} snapshots",
                self.test_end,
                self.snapshots.len()
            )));
        }
        Ok(())
    }
}

/// Adds `(o, r + |R|, s, t)` for every `(s, r, o, t)`.
///
/// Subject-side queries `(?, r, o, t)` are then answered as `(o, r + |R|, ?, t)`.
pub fn add_inverse_relations(data: &TkgDataset) -> Result<TkgDataset> {
    if data.inverse_added {
        return Err(Error::Contract("inverse relations already added".into()));
    }
    let nr = data.num_relations;
    let mut out = data.clone();
    for snap in &mut out.snapshots {
        let inverse: Vec<Triple> = snap
            .facts
            .iter()
            .map(|f| Triple::new(f.object, f.relation + nr, f.subject))
            .collect();
        snap.facts.extend(inverse);
    }
    out.inverse_added = true;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TkgDataset {
        TkgDataset {
            num_entities: 2,
            num_relations: 1,
            inverse_added: false,
            snapshots: vec![Snapshot::new(0, vec![Triple::new(0, 0, 1)])],
            train_end: 0,
            valid_end: 0,
            test_end: 0,
            granularity: "step".into(),
        }
    }

    #[test]
    fn inverse_of_single_fact() {
        let aug = add_inverse_relations(&tiny()).unwrap();
        assert_eq!(
            aug.snapshots[0].facts,
            vec![Triple::new(0, 0, 1), Triple::new(1, 1, 0)]
        );
        assert_eq!(aug.relation_vocab(), 2);
        aug.validate().unwrap();
    }

    #[test]
    fn double_augmentation_rejected() {
        let aug = add_inverse_relations(&tiny()).unwrap();
        assert!(matches!(
            add_inverse_relations(&aug),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn split_ranges() {
        let mut d = tiny();
        d.snapshots = (0..10).map(|t| Snapshot::new(t, vec![])).collect();
        d.train_end = 5;
        d.valid_end = 7;
        d.test_end = 9;
        assert_eq!(d.split_times(Split::Train), 0..=5);
        assert_eq!(d.split_times(Split::Valid), 6..=7);
        assert_eq!(d.split_times(Split::Test), 8..=9);
    }
}
