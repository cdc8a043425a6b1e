use std::fs::File;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use cen_core::{Metrics, MetricsReport};

/// CSV file whose first line is `# manifest <hash>`.
pub fn csv_writer(path: &Path, manifest_hash: &str, header: &[&str]) -> Result<csv::Writer<File>> {
    let mut f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    writeln!(f, "# manifest {manifest_hash}")?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(header)?;
    Ok(w)
}

pub fn fmt_metric(x: f64) -> String {
    format!("{x:.6}")
}

pub fn metric_fields(m: &Metrics) -> Vec<String> {
    [m.mrr, m.hits1, m.hits3, m.hits10]
        .iter()
        .map(|&x| fmt_metric(x))
        .collect()
}

pub const REPORT_HEADER: [&str; 6] = ["direction", "queries", "mrr", "hits1", "hits3", "hits10"];

pub fn report_rows(r: &MetricsReport) -> Vec<(&'static str, Metrics)> {
    vec![
        ("object", r.object),
        ("subject", r.subject),
        ("overall", r.overall),
    ]
}

pub fn write_report_csv(path: &Path, hash: &str, r: &MetricsReport) -> Result<()> {
    let mut w = csv_writer(path, hash, &REPORT_HEADER)?;
    for (name, m) in report_rows(r) {
        let mut rec = vec![name.to_string(), m.count.to_string()];
        rec.extend(metric_fields(&m));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Aligned text table of a report (metrics in percent).
pub fn report_table(r: &MetricsReport) -> String {
    let mut s = format!(
        "{:<9} {:>8} {:>7} {:>7} {:>7} {:>7}\n",
        "direction", "queries", "MRR", "H@1", "H@3", "H@10"
    );
    for (name, m) in report_rows(r) {
        s += &format!(
            "{:<9} {:>8} {:>7.2} {:>7.2} {:>7.2} {:>7.2}\n",
            name,
            m.count,
            100.0 * m.mrr,
            100.0 * m.hits1,
            100.0 * m.hits3,
            100.0 * m.hits10
        );
    }
    s
}
