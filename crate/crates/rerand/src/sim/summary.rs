use serde::{Deserialize, Serialize};

use super::replicate::{ReplicationRecord, CRE};
use crate::asymlaw::empirical_quantile;
use crate::error::{Error, Result};
use crate::estimate::Kind;

pub const SCHEMA_VERSION: u32 = 1;
pub const MIN_ACCEPTED: usize = 100;

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McValue {
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub n_reps: u64,
    /// Replication `r` uses stream `r` of `master_seed`.
    pub rep_stream: String,
    pub population_seed: u64,
    pub population_stream: u64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindSummary {
    pub kind: Kind,
    pub mean: McValue,
    pub variance: McValue,
    pub q025: f64,
    pub q975: f64,
    /// Variance relative to the `cre` scheme.
    pub variance_ratio: Option<McValue>,
    pub coverage: McValue,
    pub plugin_coverage: Option<McValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub gap: String,
    /// `E(gap²)`
    pub second_moment: McValue,
    pub ratio: Option<McValue>,
    pub q025: f64,
    pub q975: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme_id: String,
    pub records: usize,
    pub accepted: usize,
    pub acceptance_rate: McValue,
    /// `E‖τ̂_x‖²`
    pub taux_sq: McValue,
    pub taux_sq_ratio: Option<McValue>,
    pub taux_norm_q025: f64,
    pub taux_norm_q975: f64,
    pub estimators: Vec<KindSummary>,
    pub gaps: Vec<GapSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub schemes: Vec<SchemeSummary>,
}

impl Summary {
    pub fn scheme(&self, id: &str) -> Option<&SchemeSummary> {
        self.schemes.iter().find(|s| s.scheme_id == id)
    }
}

impl SchemeSummary {
    pub fn kind(&self, kind: Kind) -> &KindSummary {
        self.estimators
            .iter()
            .find(|k| k.kind == kind)
            .expect("all kinds summarized")
    }

    pub fn gap(&self, name: &str) -> Option<&GapSummary> {
        self.gaps.iter().find(|g| g.gap == name)
    }
}

/// Sample mean with its standard error.
pub fn mc_mean(v: &[f64]) -> McValue {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    McValue {
        value: m,
        se: (var / n).sqrt(),
    }
}

/// Sample variance (`n − 1` divisor) with the large-sample standard error
/// `√((m₄ − m₂²)/n)`.
pub fn mc_variance(v: &[f64]) -> McValue {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let m2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = v.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    McValue {
        value: m2 * n / (n - 1.0).max(1.0),
        se: ((m4 - m2 * m2).max(0.0) / n).sqrt(),
    }
}

/// `a / b` with a delta-method standard error treating `a` and `b` as
/// independent. Two zeros give exactly 1.
pub fn mc_ratio(a: McValue, b: McValue) -> McValue {
    if b.value == 0.0 {
        let value = if a.value == 0.0 { 1.0 } else { f64::INFINITY };
        return McValue { value, se: 0.0 };
    }
    let r = a.value / b.value;
    let rel_a = if a.value == 0.0 { 0.0 } else { a.se / a.value };
    McValue {
        value: r,
        se: r.abs() * (rel_a.powi(2) + (b.se / b.value).powi(2)).sqrt(),
    }
}

fn proportion(hits: usize, n: usize) -> McValue {
    let p = hits as f64 / n as f64;
    McValue {
        value: p,
        se: (p * (1.0 - p) / n as f64).sqrt(),
    }
}

fn quantiles(v: &[f64]) -> (f64, f64) {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    (empirical_quantile(&s, 0.025), empirical_quantile(&s, 0.975))
}

struct Raw {
    id: String,
    records: usize,
    accepted: Vec<ReplicationRecord>,
}

const GAPS: [&str; 3] = ["nf", "nl", "fl"];

fn gap_value(r: &ReplicationRecord, g: &str) -> f64 {
    match g {
        "nf" => r.gap_nf,
        "nl" => r.gap_nl,
        _ => r.gap_fl,
    }
}

/// Per-scheme summaries over accepted records, with ratios relative to the
/// `cre` group when present. Schemes appear in order of first occurrence.
pub fn summarize(records: &[ReplicationRecord], provenance: Provenance) -> Result<Summary> {
    let mut groups: Vec<Raw> = Vec::new();
    for r in records {
        let g = match groups.iter_mut().position(|g| g.id == r.scheme_id) {
            Some(k) => &mut groups[k],
            None => {
                groups.push(Raw {
                    id: r.scheme_id.clone(),
                    records: 0,
                    accepted: Vec::new(),
                });
                groups.last_mut().unwrap()
            }
        };
        g.records += 1;
        if r.accepted {
            g.accepted.push(r.clone());
        }
    }
    if let Some(g) = groups.iter().find(|g| g.accepted.len() < MIN_ACCEPTED) {
        return Err(Error::TooFewAccepted {
            scheme: g.id.clone(),
            accepted: g.accepted.len(),
        });
    }
    let base: Vec<SchemeSummary> = groups.iter().map(|g| summarize_group(g, None)).collect();
    let cre = base.iter().find(|s| s.scheme_id == CRE).cloned();
    let schemes = groups.iter().map(|g| summarize_group(g, cre.as_ref())).collect();
    Ok(Summary {
        schema_version: SCHEMA_VERSION,
        provenance,
        schemes,
    })
}

fn summarize_group(g: &Raw, cre: Option<&SchemeSummary>) -> SchemeSummary {
    let acc = &g.accepted;
    let col = |f: &dyn Fn(&ReplicationRecord) -> f64| acc.iter().map(f).collect::<Vec<f64>>();
    let taux = col(&|r| r.taux_norm);
    let taux_sq = mc_mean(&col(&|r| r.taux_norm * r.taux_norm));
    let (tq1, tq2) = quantiles(&taux);
    let estimators = Kind::ALL
        .iter()
        .enumerate()
        .map(|(k, &kind)| {
            let v = col(&|r| r.tau(kind));
            let (q025, q975) = quantiles(&v);
            let variance = mc_variance(&v);
            let plugin: Vec<bool> = acc
                .iter()
                .filter_map(|r| match kind {
                    Kind::N => r.plugin_hit_n,
                    Kind::F => r.plugin_hit_f,
                    Kind::L => None,
                })
                .collect();
            KindSummary {
                kind,
                mean: mc_mean(&v),
                variance,
                q025,
                q975,
                variance_ratio: cre.map(|c| mc_ratio(variance, c.estimators[k].variance)),
                coverage: proportion(acc.iter().filter(|r| r.hit(kind)).count(), acc.len()),
                plugin_coverage: (!plugin.is_empty())
                    .then(|| proportion(plugin.iter().filter(|h| **h).count(), plugin.len())),
            }
        })
        .collect();
    let gaps = GAPS
        .iter()
        .enumerate()
        .map(|(k, &name)| {
            let v = col(&|r| gap_value(r, name));
            let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
            let second_moment = mc_mean(&sq);
            let (q025, q975) = quantiles(&v);
            GapSummary {
                gap: name.into(),
                second_moment,
                ratio: cre.map(|c| mc_ratio(second_moment, c.gaps[k].second_moment)),
                q025,
                q975,
            }
        })
        .collect();
    SchemeSummary {
        scheme_id: g.id.clone(),
        records: g.records,
        accepted: acc.len(),
        acceptance_rate: proportion(acc.len(), g.records),
        taux_sq,
        taux_sq_ratio: cre.map(|c| mc_ratio(taux_sq, c.taux_sq)),
        taux_norm_q025: tq1,
        taux_norm_q975: tq2,
        estimators,
        gaps,
    }
}
