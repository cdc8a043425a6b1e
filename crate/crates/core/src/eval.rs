//! Ranking evaluation under the raw and time-aware filtered settings.

use std::collections::{HashMap, HashSet};

use crate::data::{Snapshot, Split, TkgDataset, Triple};
use crate::error::{Error, Result};

/// Anything that can score every entity as the answer to `(subject, relation, ?)`.
pub trait Scorer: Sync {
    /// `history` holds every snapshot strictly before the query time, oldest first.
    fn score(&self, history: &[Snapshot], queries: &[(usize, usize)]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterMode {
    Raw,
    TimeAware,
}

impl std::str::FromStr for FilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Self::Raw),
            "time-filtered" | "time-aware" | "filtered" => Ok(Self::TimeAware),
            other => Err(Error::Config(format!("unknown evaluation mode `{other}`"))),
        }
    }
}

/// How candidates scoring exactly as high as the target are counted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TieRule {
    /// Ties never worsen the rank.
    #[default]
    Optimistic,
    /// Every tie ranks ahead of the target.
    Pessimistic,
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub mode: FilterMode,
    pub tie_rule: TieRule,
    pub threads: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mode: FilterMode::TimeAware,
            tie_rule: TieRule::Optimistic,
            threads: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankingResult {
    pub time: usize,
    pub query: Triple,
    /// Rank under the requested filter mode.
    pub rank: usize,
    pub raw_rank: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub count: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub overall: Metrics,
    /// `(s, r, ?, t)` queries.
    pub object: Metrics,
    /// `(?, r, o, t)` queries, answered through inverse relations.
    pub subject: Metrics,
}

impl MetricsReport {
    pub fn from_results(results: &[RankingResult], num_relations: usize) -> Self {
        let ranks = |pred: &dyn Fn(&RankingResult) -> bool| {
            aggregate(
                &results
                    .iter()
                    .filter(|r| pred(r))
                    .map(|r| r.rank)
                    .collect::<Vec<_>>(),
            )
        };
        Self {
            overall: ranks(&|_| true),
            object: ranks(&|r| r.query.relation < num_relations),
            subject: ranks(&|r| r.query.relation >= num_relations),
        }
    }
}

/// Other true objects of `(s, r, ?)` at the query's own timestamp.
/// Facts at other timestamps are never excluded.
pub fn time_aware_filter(
    subject: usize,
    relation: usize,
    facts_at_t: &Snapshot,
    target: usize,
) -> HashSet<usize> {
    facts_at_t
        .facts
        .iter()
        .filter(|f| f.subject == subject && f.relation == relation && f.object != target)
        .map(|f| f.object)
        .collect()
}

/// 1-based rank of `target` among candidates not in `excluded`.
pub fn rank(
    scores: &[f64],
    target: usize,
    excluded: &HashSet<usize>,
    tie: TieRule,
) -> Result<usize> {
    if excluded.contains(&target) {
        return Err(Error::Contract(format!(
            "target {target} is excluded from its own ranking"
        )));
    }
    let ts = *scores.get(target).ok_or(Error::Index {
        what: "rank target",
        index: target,
        size: scores.len(),
    })?;
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(o, &s)| {
            o != target
                && !excluded.contains(&o)
                && match tie {
                    TieRule::Optimistic => s > ts,
                    TieRule::Pessimistic => s >= ts,
                }
        })
        .count();
    Ok(1 + ahead)
}

/// MRR and Hits@{1,3,10}. An empty list yields all-zero metrics.
pub fn aggregate(ranks: &[usize]) -> Metrics {
    if ranks.is_empty() {
        return Metrics::default();
    }
    let n = ranks.len() as f64;
    let frac = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    Metrics {
        mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        hits1: frac(1),
        hits3: frac(3),
        hits10: frac(10),
        count: ranks.len(),
    }
}

/// Ranks the selected facts of snapshot `t` against the history before it.
fn rank_snapshot<S: Scorer + ?Sized>(
    scorer: &S,
    data: &TkgDataset,
    t: usize,
    select: &(dyn Fn(usize, &Triple) -> bool + Sync),
    opts: &EvalOptions,
) -> Result<Vec<RankingResult>> {
    let snap = &data.snapshots[t];
    let queries: Vec<Triple> = snap
        .facts
        .iter()
        .filter(|f| select(t, f))
        .copied()
        .collect();
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    let pairs: Vec<(usize, usize)> = queries.iter().map(|f| (f.subject, f.relation)).collect();
    let scores = scorer.score(&data.snapshots[..t], &pairs)?;

    let mut answers: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for f in &snap.facts {
        answers
            .entry((f.subject, f.relation))
            .or_default()
            .push(f.object);
    }
    let empty = HashSet::new();
    queries
        .iter()
        .zip(&scores)
        .map(|(q, sc)| {
            let raw_rank = rank(sc, q.object, &empty, opts.tie_rule)?;
            let rank_v = match opts.mode {
                FilterMode::Raw => raw_rank,
                FilterMode::TimeAware => {
                    let excluded: HashSet<usize> = answers[&(q.subject, q.relation)]
                        .iter()
                        .copied()
                        .filter(|&o| o != q.object)
                        .collect();
                    rank(sc, q.object, &excluded, opts.tie_rule)?
                }
            };
            Ok(RankingResult {
                time: t,
                query: *q,
                rank: rank_v,
                raw_rank,
            })
        })
        .collect()
}

/// Ranks every selected fact at the given timestamps. Work is spread over
/// `opts.threads` threads; the output order is independent of that count.
pub fn rank_times<S: Scorer + ?Sized>(
    scorer: &S,
    data: &TkgDataset,
    times: &[usize],
    select: &(dyn Fn(usize, &Triple) -> bool + Sync),
    opts: &EvalOptions,
) -> Result<Vec<RankingResult>> {
    for &t in times {
        if t == 0 || t >= data.snapshots.len() {
            return Err(Error::Index {
                what: "evaluation time (needs history)",
                index: t,
                size: data.snapshots.len(),
            });
        }
    }
    let threads = opts.threads.max(1).min(times.len().max(1));
    let per_time: Vec<Result<Vec<RankingResult>>> = if threads == 1 {
        times
            .iter()
            .map(|&t| rank_snapshot(scorer, data, t, select, opts))
            .collect()
    } else {
        let chunk = times.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = times
                .chunks(chunk)
                .map(|ts| {
                    scope.spawn(move || {
                        ts.iter()
                            .map(|&t| rank_snapshot(scorer, data, t, select, opts))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("evaluation thread panicked"))
                .collect()
        })
    };
    let mut out = Vec::new();
    for r in per_time {
        out.extend(r?);
    }
    Ok(out)
}

/// Both query directions for every fact of `split` (subject direction via
/// inverse relations, when present).
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    data: &TkgDataset,
    split: Split,
    opts: &EvalOptions,
) -> Result<(MetricsReport, Vec<RankingResult>)> {
    if !data.inverse_added {
        log::warn!("dataset has no inverse relations; evaluating the object direction only");
    }
    let times: Vec<usize> = data.split_times(split).filter(|&t| t > 0).collect();
    let results = rank_times(scorer, data, &times, &|_, _| true, opts)?;
    Ok((
        MetricsReport::from_results(&results, data.num_relations),
        results,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_filter_example() {
        // truths (s,r,o1,t1), (s,r,o3,t1), (s,r,o2,t2); query (s,r,?,t1) → o1
        let (s, r, o1, o2, o3) = (0, 0, 1, 2, 3);
        let t1 = Snapshot::new(1, vec![Triple::new(s, r, o1), Triple::new(s, r, o3)]);
        let _t2 = Snapshot::new(2, vec![Triple::new(s, r, o2)]);
        let excl = time_aware_filter(s, r, &t1, o1);
        assert_eq!(excl, HashSet::from([o3]));
        assert!(!excl.contains(&o2));
    }

    #[test]
    fn rank_hand_cases() {
        let ex = HashSet::from([0]);
        assert_eq!(
            rank(&[0.9, 0.5, 0.7], 2, &ex, TieRule::Optimistic).unwrap(),
            1
        );
        let none = HashSet::new();
        assert_eq!(rank(&[0.3; 6], 4, &none, TieRule::Optimistic).unwrap(), 1);
        assert_eq!(rank(&[0.3; 6], 4, &none, TieRule::Pessimistic).unwrap(), 6);
        assert!(matches!(
            rank(&[0.1, 0.2], 0, &ex, TieRule::Optimistic),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn aggregate_hand_cases() {
        let m = aggregate(&[1, 2, 4]);
        assert!((m.mrr - (1.0 + 0.5 + 0.25) / 3.0).abs() < 1e-15);
        assert!((m.mrr - 0.583_333_333_333_333_4).abs() < 1e-12);
        assert_eq!((m.hits1, m.hits3, m.hits10), (1.0 / 3.0, 2.0 / 3.0, 1.0));
        let m = aggregate(&[1, 1, 1]);
        assert_eq!((m.mrr, m.hits1, m.hits3, m.hits10), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(aggregate(&[]).count, 0);
    }
}
