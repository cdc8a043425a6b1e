use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Snapshot, Split, TkgDataset, Triple};
use crate::error::{Error, Result};

struct RawFact {
    subject: usize,
    relation: usize,
    object: usize,
    time: i64,
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    field: &str,
    name: &str,
) -> Result<T> {
    field.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("{name} `{field}` is not an integer"),
    })
}

fn read_split(path: &Path) -> Result<Vec<RawFact>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() < 4 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("expected 4 columns, found {}", cols.len()),
            });
        }
        out.push(RawFact {
            subject: parse_field(path, lineno, cols[0], "subject")?,
            relation: parse_field(path, lineno, cols[1], "relation")?,
            object: parse_field(path, lineno, cols[2], "object")?,
            time: parse_field(path, lineno, cols[3], "time")?,
        });
    }
    Ok(out)
}

fn read_stat(path: &Path) -> Result<(usize, usize)> {
    let text = fs::read_to_string(path)?;
    let cols: Vec<&str> = text.split_whitespace().collect();
    if cols.len() < 2 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "expected `num_entities num_relations`".into(),
        });
    }
    Ok((
        parse_field(path, 1, cols[0], "entity count")?,
        parse_field(path, 1, cols[1], "relation count")?,
    ))
}

/// Loads integer-column quadruple files into a densely time-indexed dataset.
///
/// Raw timestamps from all three splits are re-indexed to `0, 1, 2, …` in
/// order. Duplicate facts within a snapshot are dropped (the count is logged).
pub fn load_quadruples(
    train: &Path,
    valid: &Path,
    test: &Path,
    stat: Option<&Path>,
) -> Result<TkgDataset> {
    let splits = [read_split(train)?, read_split(valid)?, read_split(test)?];
    if splits[0].is_empty() {
        return Err(Error::EmptySplit("train"));
    }

    let max_time = |facts: &[RawFact]| facts.iter().map(|f| f.time).max();
    let min_time = |facts: &[RawFact]| facts.iter().map(|f| f.time).min();
    let train_last = max_time(&splits[0]).expect("non-empty");
    if let Some(t) = min_time(&splits[1]).filter(|&t| t <= train_last) {
        return Err(Error::SplitViolation {
            split: "valid",
            time: t,
            bound: train_last,
        });
    }
    let valid_last = max_time(&splits[1]).unwrap_or(train_last);
    if let Some(t) = min_time(&splits[2]).filter(|&t| t <= valid_last) {
        return Err(Error::SplitViolation {
            split: "test",
            time: t,
            bound: valid_last,
        });
    }

    let times: Vec<i64> = splits
        .iter()
        .flatten()
        .map(|f| f.time)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index_of = |raw: i64| times.binary_search(&raw).expect("collected above");

    let max_entity = splits
        .iter()
        .flatten()
        .map(|f| f.subject.max(f.object))
        .max()
        .unwrap_or(0);
    let max_relation = splits
        .iter()
        .flatten()
        .map(|f| f.relation)
        .max()
        .unwrap_or(0);
    let (num_entities, num_relations) = match stat {
        Some(p) => {
            let (ne, nr) = read_stat(p)?;
            if max_entity >= ne {
                return Err(Error::Index {
                    what: "entity (stat.txt)",
                    index: max_entity,
                    size: ne,
                });
            }
            if max_relation >= nr {
                return Err(Error::Index {
                    what: "relation (stat.txt)",
                    index: max_relation,
                    size: nr,
                });
            }
            (ne, nr)
        }
        None => (max_entity + 1, max_relation + 1),
    };

    let mut snapshots: Vec<Snapshot> = (0..times.len())
        .map(|t| Snapshot::new(t, Vec::new()))
        .collect();
    for f in splits.iter().flatten() {
        snapshots[index_of(f.time)]
            .facts
            .push(Triple::new(f.subject, f.relation, f.object));
    }
    let dupes: usize = snapshots.iter_mut().map(Snapshot::dedup).sum();
    if dupes > 0 {
        log::info!("dropped {dupes} duplicate quadruples");
    }

    let train_end = index_of(train_last);
    let valid_end = index_of(valid_last);
    let test_end = times.len() - 1;
    let data = TkgDataset {
        num_entities,
        num_relations,
        inverse_added: false,
        snapshots,
        train_end,
        valid_end,
        test_end,
        granularity: "step".into(),
    };
    data.validate()?;
    Ok(data)
}

/// Writes `train.txt`, `valid.txt`, `test.txt` and `stat.txt` into `dir`.
/// Inverse facts, if present, are not written.
pub fn save_dataset(data: &TkgDataset, dir: &Path) -> Result<[PathBuf; 3]> {
    fs::create_dir_all(dir)?;
    let paths = [
        dir.join("train.txt"),
        dir.join("valid.txt"),
        dir.join("test.txt"),
    ];
    for (path, split) in paths.iter().zip([Split::Train, Split::Valid, Split::Test]) {
        let mut w = std::io::BufWriter::new(fs::File::create(path)?);
        for t in data.split_times(split) {
            let Some(snap) = data.snapshots.get(t) else {
                continue;
            };
            for f in snap
                .facts
                .iter()
                .filter(|f| f.relation < data.num_relations)
            {
                writeln!(w, "{}\t{}\t{}\t{}", f.subject, f.relation, f.object, t)?;
            }
        }
        w.flush()?;
    }
    fs::write(
        dir.join("stat.txt"),
        format!("{}\t{}\n", data.num_entities, data.num_relations),
    )?;
    Ok(paths)
}
