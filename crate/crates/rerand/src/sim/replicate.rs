use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::population::PotentialOutcomeTable;
use crate::balance::{evaluate, Assignment, BalanceScheme, ExperimentFrame};
use crate::design::{complete_randomization, rerandomize, RngStream};
use crate::error::Result;
use crate::estimate::{
    estimate_multi_arm, estimate_two_arm_all, plugin_inference, plugin_inference_multi_arm, Contrast, EffectEstimate,
    Kind,
};

/// Scheme id of the unfiltered complete-randomization baseline.
pub const CRE: &str = "cre";

/// One replication under one scheme. Estimates target the first row of the
/// population contrast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep_id: u64,
    pub scheme_id: String,
    pub accepted: bool,
    /// `‖τ̂_x‖₂` for two arms; the norm of the stacked arm means `x̂` otherwise.
    pub taux_norm: f64,
    pub tau_n: f64,
    pub tau_f: f64,
    pub tau_l: f64,
    pub gap_nf: f64,
    pub gap_nl: f64,
    pub gap_fl: f64,
    pub se_n: f64,
    pub se_f: f64,
    pub se_l: f64,
    pub hit_n: bool,
    pub hit_f: bool,
    pub hit_l: bool,
    pub plugin_hit_n: Option<bool>,
    pub plugin_hit_f: Option<bool>,
    pub plugin_width_n: Option<f64>,
    pub plugin_width_f: Option<f64>,
}

impl ReplicationRecord {
    pub fn tau(&self, kind: Kind) -> f64 {
        match kind {
            Kind::N => self.tau_n,
            Kind::F => self.tau_f,
            Kind::L => self.tau_l,
        }
    }

    pub fn se(&self, kind: Kind) -> f64 {
        match kind {
            Kind::N => self.se_n,
            Kind::F => self.se_f,
            Kind::L => self.se_l,
        }
    }

    pub fn hit(&self, kind: Kind) -> bool {
        match kind {
            Kind::N => self.hit_n,
            Kind::F => self.hit_f,
            Kind::L => self.hit_l,
        }
    }
}

/// Options shared by the replication drivers.
#[derive(Debug, Clone)]
pub struct ReplicationConfig {
    pub level: f64,
    /// Worker threads; `None` uses the global pool.
    pub parallelism: Option<usize>,
    /// Plug-in law draws per replication; `None` skips plug-in intervals.
    pub plugin_draws: Option<usize>,
    pub max_draws: u64,
}

impl Default for ReplicationConfig {
    fn default() -> Self {
        Self {
            level: 0.95,
            parallelism: None,
            plugin_draws: None,
            max_draws: crate::design::DEFAULT_MAX_DRAWS,
        }
    }
}

struct Estimates {
    est: [EffectEstimate; 3],
    arm_level: Option<[EffectEstimate; 3]>,
    taux_norm: f64,
}

fn estimate_all(
    frame: &ExperimentFrame,
    a: &Assignment,
    y: &[f64],
    contrast: &Contrast,
    level: f64,
) -> Result<Estimates> {
    if frame.arms() == 2 {
        let est = estimate_two_arm_all(frame, a, y, level)?;
        let taux_norm = est[0].tau_x.iter().map(|v| v * v).sum::<f64>().sqrt();
        return Ok(Estimates {
            est,
            arm_level: None,
            taux_norm,
        });
    }
    let arm = [
        estimate_multi_arm(frame, a, y, Kind::N, level)?,
        estimate_multi_arm(frame, a, y, Kind::F, level)?,
        estimate_multi_arm(frame, a, y, Kind::L, level)?,
    ];
    let est = [
        arm[0].contrast(contrast)?,
        arm[1].contrast(contrast)?,
        arm[2].contrast(contrast)?,
    ];
    let taux_norm = frame.arm_means(a).norm();
    Ok(Estimates {
        est,
        arm_level: Some(arm),
        taux_norm,
    })
}

fn record(rep_id: u64, scheme_id: String, accepted: bool, e: &Estimates, tau: f64) -> ReplicationRecord {
    let [n, f, l] = &e.est;
    ReplicationRecord {
        rep_id,
        scheme_id,
        accepted,
        taux_norm: e.taux_norm,
        tau_n: n.point[0],
        tau_f: f.point[0],
        tau_l: l.point[0],
        gap_nf: n.point[0] - f.point[0],
        gap_nl: n.point[0] - l.point[0],
        gap_fl: f.point[0] - l.point[0],
        se_n: n.se(0),
        se_f: f.se(0),
        se_l: l.se(0),
        hit_n: n.normal_ci[0].contains(tau),
        hit_f: f.normal_ci[0].contains(tau),
        hit_l: l.normal_ci[0].contains(tau),
        plugin_hit_n: None,
        plugin_hit_f: None,
        plugin_width_n: None,
        plugin_width_f: None,
    }
}

fn in_pool<T: Send>(parallelism: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match parallelism {
        None => Ok(job()),
        Some(threads) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.max(1))
                .build()
                .map_err(|e| crate::Error::InvalidInput(e.to_string()))?;
            Ok(pool.install(job))
        }
    }
}

/// Filtering design: each replication draws one complete randomization from
/// stream `(master_seed, rep)`, and every scheme only flags whether that draw
/// is acceptable. A `cre` record (always accepted) is emitted first for each
/// replication, then one record per scheme, ordered by replication.
pub fn run_replications(
    pop: &PotentialOutcomeTable,
    schemes: &[BalanceScheme],
    n_reps: u64,
    master_seed: u64,
    config: &ReplicationConfig,
) -> Result<Vec<ReplicationRecord>> {
    let frame = pop.frame()?;
    let contrast = pop.spec.contrast()?;
    let tau = pop.tau()?[0];
    for s in schemes {
        s.validate(frame.j(), frame.arms())?;
    }
    let one = |rep: u64| -> Result<Vec<ReplicationRecord>> {
        let stream = RngStream::new(master_seed, rep);
        let a = complete_randomization(frame.arm_sizes(), &mut stream.rng())?;
        let y = pop.observed(&a);
        let e = estimate_all(&frame, &a, &y, &contrast, config.level)?;
        let mut out = Vec::with_capacity(schemes.len() + 1);
        out.push(record(rep, CRE.into(), true, &e, tau));
        for s in schemes {
            let accepted = evaluate(&frame, &a, s)?.accepted;
            out.push(record(rep, s.label(), accepted, &e, tau));
        }
        Ok(out)
    };
    let nested = in_pool(config.parallelism, || {
        (0..n_reps).into_par_iter().map(one).collect::<Result<Vec<_>>>()
    })??;
    Ok(nested.into_iter().flatten().collect())
}

/// Rerandomized design: replication `rep` rejection-samples an acceptable
/// allocation from stream `(master_seed, rep)`, so every record is accepted.
/// With `plugin_draws` set, plug-in intervals for `N` and `F` are added.
pub fn run_rerandomized(
    pop: &PotentialOutcomeTable,
    scheme: &BalanceScheme,
    n_reps: u64,
    master_seed: u64,
    config: &ReplicationConfig,
) -> Result<Vec<ReplicationRecord>> {
    let frame = pop.frame()?;
    let contrast = pop.spec.contrast()?;
    let tau = pop.tau()?[0];
    let one = |rep: u64| -> Result<ReplicationRecord> {
        let stream = RngStream::new(master_seed, rep);
        let design = rerandomize(&frame, scheme, &stream, config.max_draws)?;
        let a = design.assignment;
        let y = pop.observed(&a);
        let e = estimate_all(&frame, &a, &y, &contrast, config.level)?;
        let mut r = record(rep, scheme.label(), true, &e, tau);
        if let Some(draws) = config.plugin_draws {
            let law_stream = stream.derive(0x006c_6177);
            let mut ci = [None, None];
            for (k, slot) in ci.iter_mut().enumerate() {
                let interval = match &e.arm_level {
                    None => plugin_inference(&e.est[k], &frame, scheme, config.level, draws, &law_stream)?,
                    Some(arm) => plugin_inference_multi_arm(
                        &arm[k],
                        &frame,
                        scheme,
                        &contrast,
                        config.level,
                        draws,
                        &law_stream,
                    )?[0],
                };
                *slot = Some(interval);
            }
            r.plugin_hit_n = ci[0].map(|c| c.contains(tau));
            r.plugin_hit_f = ci[1].map(|c| c.contains(tau));
            r.plugin_width_n = ci[0].map(|c| c.width());
            r.plugin_width_f = ci[1].map(|c| c.width());
        }
        Ok(r)
    };
    in_pool(config.parallelism, || {
        (0..n_reps).into_par_iter().map(one).collect::<Result<Vec<_>>>()
    })?
}
