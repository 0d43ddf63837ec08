use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::replicate::ReplicationRecord;
use crate::error::Result;

/// Column order of record CSV files.
pub const RECORD_COLUMNS: [&str; 20] = [
    "rep_id",
    "scheme_id",
    "accepted",
    "taux_norm",
    "tau_n",
    "tau_f",
    "tau_l",
    "gap_nf",
    "gap_nl",
    "gap_fl",
    "se_n",
    "se_f",
    "se_l",
    "hit_n",
    "hit_f",
    "hit_l",
    "plugin_hit_n",
    "plugin_hit_f",
    "plugin_width_n",
    "plugin_width_f",
];

pub fn write_records_csv<W: Write>(out: W, records: &[ReplicationRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(RECORD_COLUMNS)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: std::io::Read>(input: R) -> Result<Vec<ReplicationRecord>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| Ok(row?)).collect()
}

pub fn save_records(path: &Path, records: &[ReplicationRecord]) -> Result<()> {
    write_records_csv(BufWriter::new(File::create(path)?), records)
}

pub fn load_records(path: &Path) -> Result<Vec<ReplicationRecord>> {
    read_records_csv(File::open(path)?)
}

/// Pretty-printed JSON followed by a newline.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub quantity: String,
    pub scheme_id: String,
    pub bin_lower: f64,
    pub bin_upper: f64,
    pub count: usize,
    pub density: f64,
    pub q025: f64,
    pub q975: f64,
}

const QUANTITIES: [&str; 7] = ["taux_norm", "gap_nf", "gap_nl", "gap_fl", "tau_n", "tau_f", "tau_l"];

fn quantity(r: &ReplicationRecord, q: &str) -> f64 {
    match q {
        "taux_norm" => r.taux_norm,
        "gap_nf" => r.gap_nf,
        "gap_nl" => r.gap_nl,
        "gap_fl" => r.gap_fl,
        "tau_n" => r.tau_n,
        "tau_f" => r.tau_f,
        _ => r.tau_l,
    }
}

/// Histograms of accepted records per quantity and scheme, on bins shared
/// across schemes, with 2.5% and 97.5% empirical quantiles as markers.
pub fn histogram(records: &[ReplicationRecord], bins: usize) -> Vec<HistogramRow> {
    let bins = bins.max(1);
    let mut schemes: Vec<&str> = Vec::new();
    for r in records {
        if !schemes.contains(&r.scheme_id.as_str()) {
            schemes.push(&r.scheme_id);
        }
    }
    let mut rows = Vec::new();
    for q in QUANTITIES {
        let all: Vec<f64> = records.iter().filter(|r| r.accepted).map(|r| quantity(r, q)).collect();
        if all.is_empty() {
            continue;
        }
        let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        for s in &schemes {
            let mut v: Vec<f64> = records
                .iter()
                .filter(|r| r.accepted && r.scheme_id == *s)
                .map(|r| quantity(r, q))
                .collect();
            if v.is_empty() {
                continue;
            }
            v.sort_by(f64::total_cmp);
            let q025 = crate::asymlaw::empirical_quantile(&v, 0.025);
            let q975 = crate::asymlaw::empirical_quantile(&v, 0.975);
            let mut counts = vec![0usize; bins];
            for x in &v {
                let k = (((x - lo) / width) as usize).min(bins - 1);
                counts[k] += 1;
            }
            for (k, c) in counts.into_iter().enumerate() {
                rows.push(HistogramRow {
                    quantity: q.into(),
                    scheme_id: s.to_string(),
                    bin_lower: lo + k as f64 * width,
                    bin_upper: lo + (k + 1) as f64 * width,
                    count: c,
                    density: c as f64 / (v.len() as f64 * width),
                    q025,
                    q975,
                });
            }
        }
    }
    rows
}

pub fn save_histogram(path: &Path, rows: &[HistogramRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_header_only() {
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &[]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.trim_end(), RECORD_COLUMNS.join(","));
        assert!(read_records_csv(text.as_bytes()).unwrap().is_empty());
    }
}
