//! Complete randomization and rejection-sampling rerandomization.

mod rng;

pub use rng::RngStream;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::balance::{evaluate, Assignment, BalanceReport, BalanceScheme, ExperimentFrame};
use crate::error::{Error, Result};

const PROGRESS_EVERY: u64 = 10_000;
pub const DEFAULT_MAX_DRAWS: u64 = 1_000_000;

/// An accepted allocation and the search that produced it.
#[derive(Debug, Clone)]
pub struct DesignResult {
    pub assignment: Assignment,
    /// 1-based index of the accepted draw.
    pub draws_used: u64,
    /// `1 / draws_used`: the accepted fraction among the draws up to and
    /// including the accepted one.
    pub acceptance_rate_estimate: f64,
    pub report: BalanceReport,
    pub scheme: BalanceScheme,
}

/// Uniformly random allocation with exactly `arm_sizes[q]` units in arm `q`
/// (Fisher–Yates shuffle of the label multiset).
pub fn complete_randomization<R: Rng + ?Sized>(arm_sizes: &[usize], rng: &mut R) -> Result<Assignment> {
    if let Some(q) = arm_sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptyArm(q));
    }
    let mut arms: Vec<usize> = arm_sizes
        .iter()
        .enumerate()
        .flat_map(|(q, &s)| std::iter::repeat_n(q, s))
        .collect();
    arms.shuffle(rng);
    Ok(Assignment::from_arms_unchecked(arms, arm_sizes.len()))
}

struct Candidate {
    index: u64,
    accepted: bool,
    joint_pvalue: Option<f64>,
    found: Option<(Assignment, BalanceReport)>,
}

fn draw_candidate(
    frame: &ExperimentFrame,
    scheme: &BalanceScheme,
    stream: &RngStream,
    index: u64,
) -> Result<Candidate> {
    let a = complete_randomization(frame.arm_sizes(), &mut stream.rng_at(index))?;
    let report = evaluate(frame, &a, scheme)?;
    Ok(Candidate {
        index,
        accepted: report.accepted,
        joint_pvalue: report.joint_pvalue,
        found: report.accepted.then_some((a, report)),
    })
}

/// Draws complete randomizations until one satisfies `scheme`.
///
/// Draw `k` uses substream `k` of `stream` and the accepted draw with the
/// lowest index wins. Candidates are evaluated in parallel batches of one per
/// worker, so the result does not depend on the thread count.
pub fn rerandomize(
    frame: &ExperimentFrame,
    scheme: &BalanceScheme,
    stream: &RngStream,
    max_draws: u64,
) -> Result<DesignResult> {
    if max_draws == 0 {
        return Err(Error::InvalidInput("max_draws must be at least 1".into()));
    }
    scheme.validate(frame.j(), frame.arms())?;
    // already inside a parallel caller: search sequentially
    let batch_size = match rayon::current_thread_index() {
        Some(_) => 1,
        None => rayon::current_num_threads().max(1) as u64,
    };
    let mut best_joint: Option<f64> = None;
    let mut start = 0u64;
    while start < max_draws {
        let end = (start + batch_size).min(max_draws);
        let batch: Vec<Candidate> = (start..end)
            .into_par_iter()
            .map(|i| draw_candidate(frame, scheme, stream, i))
            .collect::<Result<_>>()?;
        for p in batch.iter().filter_map(|c| c.joint_pvalue) {
            best_joint = Some(best_joint.map_or(p, |b: f64| b.max(p)));
        }
        if let Some(c) = batch.into_iter().find(|c| c.accepted) {
            let (assignment, report) = c.found.expect("accepted candidate carries its report");
            return Ok(DesignResult {
                assignment,
                draws_used: c.index + 1,
                acceptance_rate_estimate: 1.0 / (c.index + 1) as f64,
                report,
                scheme: scheme.clone(),
            });
        }
        if end / PROGRESS_EVERY > start / PROGRESS_EVERY {
            log::debug!("{end} draws rejected; best joint p-value {best_joint:?}");
        }
        start = end;
    }
    Err(Error::MaxDrawsExceeded {
        attempted: max_draws,
        best_joint_pvalue: best_joint,
    })
}

/// Acceptance probability of `scheme` under complete randomization, with its
/// binomial standard error.
pub fn estimate_acceptance_rate(
    frame: &ExperimentFrame,
    scheme: &BalanceScheme,
    n_trials: u64,
    stream: &RngStream,
) -> Result<(f64, f64)> {
    if n_trials < 100 {
        return Err(Error::InvalidInput("n_trials must be at least 100".into()));
    }
    scheme.validate(frame.j(), frame.arms())?;
    let hits: u64 = (0..n_trials)
        .into_par_iter()
        .map(|i| draw_candidate(frame, scheme, stream, i).map(|c| u64::from(c.accepted)))
        .sum::<Result<u64>>()?;
    let rate = hits as f64 / n_trials as f64;
    Ok((rate, (rate * (1.0 - rate) / n_trials as f64).sqrt()))
}
