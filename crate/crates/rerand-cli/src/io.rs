use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use nalgebra::DMatrix;
use rerand::balance::{Assignment, BalanceScheme};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// A CSV file with a header row, cells kept as trimmed strings.
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .with_context(|| format!("cannot open {}", path.display()))?;
        let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for (k, rec) in reader.records().enumerate() {
            let rec = rec.with_context(|| format!("{}: bad row {}", path.display(), k + 2))?;
            rows.push(rec.iter().map(str::to_owned).collect());
        }
        ensure!(!rows.is_empty(), "{} has no data rows", path.display());
        Ok(Self { headers, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h.eq_ignore_ascii_case(name))
    }

    fn number(&self, row: usize, col: usize) -> Result<f64> {
        let cell = &self.rows[row][col];
        cell.parse::<f64>().ok().filter(|v| v.is_finite()).with_context(|| {
            format!(
                "row {}, column '{}': '{cell}' is not a number",
                row + 2,
                self.headers[col]
            )
        })
    }

    /// Numeric matrix of the given columns.
    pub fn matrix(&self, cols: &[usize]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(self.rows.len(), cols.len());
        for i in 0..self.rows.len() {
            for (k, &c) in cols.iter().enumerate() {
                m[(i, k)] = self.number(i, c)?;
            }
        }
        Ok(m)
    }

    pub fn integers(&self, col: usize) -> Result<Vec<i64>> {
        (0..self.rows.len())
            .map(|i| {
                let v = self.number(i, col)?;
                ensure!(
                    v.fract() == 0.0,
                    "row {}: assignment label {v} is not an integer",
                    i + 2
                );
                Ok(v as i64)
            })
            .collect()
    }
}

/// Covariates from `unit_id,x1,...,xJ`.
pub struct Covariates {
    pub unit_ids: Vec<String>,
    pub x: DMatrix<f64>,
}

pub fn read_covariates(path: &Path) -> Result<Covariates> {
    let t = Table::read(path)?;
    ensure!(
        t.headers.first().is_some_and(|h| h.eq_ignore_ascii_case("unit_id")),
        "{}: first column must be unit_id",
        path.display()
    );
    ensure!(t.headers.len() >= 2, "{}: no covariate columns", path.display());
    let cols: Vec<usize> = (1..t.headers.len()).collect();
    let x = t.matrix(&cols)?;
    let unit_ids: Vec<String> = t.rows.iter().map(|r| r[0].clone()).collect();
    let mut seen = HashMap::new();
    for (i, id) in unit_ids.iter().enumerate() {
        if let Some(prev) = seen.insert(id.as_str(), i) {
            bail!("duplicate unit_id '{id}' in rows {} and {}", prev + 2, i + 2);
        }
    }
    Ok(Covariates { unit_ids, x })
}

/// Number of arms implied by external labels: 2 when any label is 0,
/// otherwise the largest label.
pub fn levels_of(labels: &[i64]) -> Result<usize> {
    ensure!(labels.iter().all(|&l| l >= 0), "assignment labels must be non-negative");
    let max = labels.iter().copied().max().unwrap_or(0);
    if labels.contains(&0) {
        ensure!(max <= 1, "label 0 is only allowed together with 1 (two arms)");
        return Ok(2);
    }
    ensure!(max >= 2, "need at least two arms");
    Ok(max as usize)
}

/// Parses labels into an assignment and the arm sizes it implies.
pub fn assignment_from_labels(labels: &[i64]) -> Result<(Assignment, Vec<usize>)> {
    let a = Assignment::from_labels(labels, levels_of(labels)?)?;
    let sizes = a.counts();
    Ok((a, sizes))
}

/// Assignment labels from `unit_id,z`, reordered to match `unit_ids`. Without
/// a `unit_id` column the rows are taken in covariate order.
pub fn read_assignment(path: &Path, unit_ids: &[String]) -> Result<Vec<i64>> {
    let t = Table::read(path)?;
    let z = ["z", "arm", "assignment"]
        .iter()
        .find_map(|n| t.column(n))
        .with_context(|| format!("{}: no z column", path.display()))?;
    let labels = t.integers(z)?;
    ensure!(
        labels.len() == unit_ids.len(),
        "assignment has {} rows but there are {} units",
        labels.len(),
        unit_ids.len()
    );
    let Some(id_col) = t.column("unit_id") else {
        return Ok(labels);
    };
    let by_id: HashMap<&str, i64> = t
        .rows
        .iter()
        .zip(&labels)
        .map(|(r, &l)| (r[id_col].as_str(), l))
        .collect();
    unit_ids
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .with_context(|| format!("unit '{id}' has no assignment"))
        })
        .collect()
}

/// Outcome data with columns `z`, `y`, the covariates, and optionally `unit_id`.
pub struct OutcomeData {
    pub labels: Vec<i64>,
    pub y: Vec<f64>,
    pub x: DMatrix<f64>,
}

pub fn read_outcome_data(path: &Path) -> Result<OutcomeData> {
    let t = Table::read(path)?;
    let z = t
        .column("z")
        .with_context(|| format!("{}: no z column", path.display()))?;
    let y = t
        .column("y")
        .with_context(|| format!("{}: no y column", path.display()))?;
    let id = t.column("unit_id");
    let cols: Vec<usize> = (0..t.headers.len())
        .filter(|&c| c != z && c != y && Some(c) != id)
        .collect();
    ensure!(!cols.is_empty(), "{}: no covariate columns", path.display());
    Ok(OutcomeData {
        labels: t.integers(z)?,
        y: t.matrix(&[y])?.iter().copied().collect(),
        x: t.matrix(&cols)?,
    })
}

/// Contrast rows from a headerless numeric CSV (a non-numeric first row is
/// skipped as a header).
pub fn read_contrast(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(_) if k == 0 => continue,
            Err(e) => bail!("{}: row {}: {e}", path.display(), k + 1),
        }
    }
    ensure!(!rows.is_empty(), "{}: empty contrast", path.display());
    let cols = rows[0].len();
    ensure!(rows.iter().all(|r| r.len() == cols), "contrast rows differ in length");
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    serde_json::from_reader(std::io::BufReader::new(file)).with_context(|| format!("cannot parse {}", path.display()))
}

pub fn read_scheme(path: &Path) -> Result<BalanceScheme> {
    read_json(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn parse_arms(s: &str) -> Result<Vec<usize>> {
    let sizes = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().with_context(|| format!("bad arm size '{p}'")))
        .collect::<Result<Vec<_>>>()?;
    ensure!(sizes.len() >= 2, "--arms needs at least two sizes");
    Ok(sizes)
}
