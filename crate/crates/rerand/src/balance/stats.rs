use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::frame::{Assignment, ExperimentFrame};
use super::scheme::{BalanceScheme, JointReference, Model, Studentization};
use crate::error::{Error, Result};
use crate::numerics::{mahalanobis, sf, DistributionId, SymMatrix};
use crate::regression::{mlogit_fit, mlogit_lrt, mlogit_sandwich, ols_f_test, ols_fit, sub_block, wald_stat};

/// Outcome of evaluating one allocation against a scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub marginal_stats: Vec<f64>,
    pub marginal_pvalues: Vec<f64>,
    pub joint_stat: Option<f64>,
    pub joint_pvalue: Option<f64>,
    /// `τ̂_x` for two arms, stacked `x̂(q)` otherwise.
    pub taux_hat: Vec<f64>,
    pub accepted: bool,
    pub diagnostics: BTreeMap<String, u64>,
}

/// Per-arm first and second moments for a two-arm allocation.
struct TwoArm {
    n1: f64,
    n0: f64,
    m1: DVector<f64>,
    m0: DVector<f64>,
}

impl TwoArm {
    fn new(frame: &ExperimentFrame, a: &Assignment) -> Result<Self> {
        frame.require_arms(2)?;
        let m = frame.arm_means(a);
        let sizes = frame.arm_sizes();
        Ok(Self {
            n1: sizes[0] as f64,
            n0: sizes[1] as f64,
            m1: m.row(0).transpose(),
            m0: m.row(1).transpose(),
        })
    }

    fn tau(&self) -> DVector<f64> {
        &self.m1 - &self.m0
    }

    /// Pooled within-arm SSCP `Σ_q Σ_{i∈q} (xᵢ − x̂(q))(xᵢ − x̂(q))ᵀ`.
    fn pooled_sscp(&self, frame: &ExperimentFrame) -> DMatrix<f64> {
        let total = frame.s2x().matrix() * (frame.n() as f64 - 1.0);
        total - &self.m1 * self.m1.transpose() * self.n1 - &self.m0 * self.m0.transpose() * self.n0
    }

    /// Within-arm SSCPs of arm 0 and arm 1.
    fn arm_sscp(&self, frame: &ExperimentFrame, a: &Assignment) -> (DMatrix<f64>, DMatrix<f64>) {
        let j = frame.j();
        let x = frame.covariates();
        let mut raw1 = DMatrix::<f64>::zeros(j, j);
        for (i, &arm) in a.arms().iter().enumerate() {
            if arm == 0 {
                for r in 0..j {
                    let xr = x[(i, r)];
                    for c in r..j {
                        raw1[(r, c)] += xr * x[(i, c)];
                    }
                }
            }
        }
        for r in 0..j {
            for c in 0..r {
                raw1[(r, c)] = raw1[(c, r)];
            }
        }
        let total = frame.s2x().matrix() * (frame.n() as f64 - 1.0);
        let raw0 = &total - &raw1;
        (
            raw1 - &self.m1 * self.m1.transpose() * self.n1,
            raw0 - &self.m0 * self.m0.transpose() * self.n0,
        )
    }
}

fn two_sided_t(t: f64, df: usize) -> Result<f64> {
    Ok((2.0 * sf(DistributionId::StudentT { df }, t.abs())?).min(1.0))
}

fn two_sided_normal(z: f64) -> Result<f64> {
    Ok((2.0 * sf(DistributionId::StandardNormal, z.abs())?).min(1.0))
}

/// Per-covariate two-sample t statistics and p-values against `t_{N−2}`.
///
/// Classic studentization uses the pooled standard error; `Ehw` uses the
/// HC0 standard error of `Z` in `lm(x_j ~ 1 + Z)`.
pub fn t_marginal(
    frame: &ExperimentFrame,
    a: &Assignment,
    studentization: Studentization,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = TwoArm::new(frame, a)?;
    let n = frame.n();
    let tau = s.tau();
    let variances: Vec<f64> = match studentization {
        Studentization::Classic => {
            let w = s.pooled_sscp(frame);
            (0..frame.j())
                .map(|k| w[(k, k)] / (n as f64 - 2.0) * (1.0 / s.n1 + 1.0 / s.n0))
                .collect()
        }
        Studentization::Ehw => {
            let (w1, w0) = s.arm_sscp(frame, a);
            (0..frame.j())
                .map(|k| w1[(k, k)] / (s.n1 * s.n1) + w0[(k, k)] / (s.n0 * s.n0))
                .collect()
        }
    };
    let mut stats = Vec::with_capacity(frame.j());
    let mut pvalues = Vec::with_capacity(frame.j());
    for (k, v) in variances.iter().enumerate() {
        if !(*v > 0.0) {
            return Err(Error::DegenerateWithinVariance(k));
        }
        let t = tau[k] / v.sqrt();
        stats.push(t);
        pvalues.push(two_sided_t(t, n - 2)?);
    }
    Ok((stats, pvalues))
}

/// `W_t = τ̂_xᵀ Ω̂⁻¹ τ̂_x` with its p-value.
///
/// Classic: pooled `Ω̂`. Ehw: `Ω̂′ = S²_x(1)/N₁ + S²_x(0)/N₀`. The reference is
/// `χ²_J`, or Hotelling's `T²(J, N − 2)` when requested.
pub fn t_joint(
    frame: &ExperimentFrame,
    a: &Assignment,
    reference: JointReference,
    studentization: Studentization,
) -> Result<(f64, f64)> {
    let s = TwoArm::new(frame, a)?;
    let n = frame.n();
    let j = frame.j();
    let omega = match studentization {
        Studentization::Classic => s.pooled_sscp(frame) * ((1.0 / s.n1 + 1.0 / s.n0) / (n as f64 - 2.0)),
        Studentization::Ehw => {
            let (w1, w0) = s.arm_sscp(frame, a);
            w1 / (s.n1 * (s.n1 - 1.0)) + w0 / (s.n0 * (s.n0 - 1.0))
        }
    };
    let w = mahalanobis(&s.tau(), &SymMatrix::symmetrize(omega))?;
    let dist = match reference {
        JointReference::Hotelling => DistributionId::HotellingT2 { dim: j, dof: n - 2 },
        _ => DistributionId::ChiSquare { df: j },
    };
    Ok((w, sf(dist, w)?))
}

/// Balance statistics from `lm(Z ~ 1 + x)`.
#[derive(Debug, Clone)]
pub struct LmBalance {
    pub beta: DVector<f64>,
    pub cov: SymMatrix,
    pub t: Vec<f64>,
    pub t_pvalues: Vec<f64>,
    /// F statistic against the intercept-only model (`W′/J` under EHW).
    pub f: f64,
    pub f_pvalue: f64,
    pub wald: f64,
    pub wald_pvalue: f64,
}

pub fn lm_balance(frame: &ExperimentFrame, a: &Assignment, studentization: Studentization) -> Result<LmBalance> {
    frame.require_arms(2)?;
    let n = frame.n();
    let j = frame.j();
    let x = frame.covariates();
    let design = DMatrix::from_fn(n, j + 1, |i, k| if k == 0 { 1.0 } else { x[(i, k - 1)] });
    let z = a.treated();
    let fit = ols_fit(&design, &z)?;
    let idx: Vec<usize> = (1..=j).collect();
    let cov = match studentization {
        Studentization::Classic => sub_block(&fit.classic_cov, &idx),
        Studentization::Ehw => sub_block(&fit.ehw_cov, &idx),
    };
    let beta = fit.coefficients.rows(1, j).into_owned();
    let df = n - 1 - j;
    let mut t = Vec::with_capacity(j);
    let mut t_pvalues = Vec::with_capacity(j);
    for k in 0..j {
        let tk = beta[k] / cov[(k, k)].sqrt();
        t.push(tk);
        t_pvalues.push(two_sided_t(tk, df)?);
    }
    let wald = wald_stat(&beta, &cov)?;
    let wald_pvalue = sf(DistributionId::ChiSquare { df: j }, wald)?;
    let (f, f_pvalue) = match studentization {
        Studentization::Classic => {
            let null = ols_fit(&DMatrix::from_element(n, 1, 1.0), &z)?;
            ols_f_test(&fit, &null)?
        }
        Studentization::Ehw => {
            let f = wald / j as f64;
            (f, sf(DistributionId::F { df1: j, df2: df }, f)?)
        }
    };
    Ok(LmBalance {
        beta,
        cov,
        t,
        t_pvalues,
        f,
        f_pvalue,
        wald,
        wald_pvalue,
    })
}

/// Balance statistics from a (multinomial) logit of the arm on the covariates.
#[derive(Debug, Clone)]
pub struct LogitBalance {
    /// Slopes `β̃`, ordered by (level, covariate).
    pub beta: DVector<f64>,
    pub cov: SymMatrix,
    pub z: Vec<f64>,
    pub z_pvalues: Vec<f64>,
    pub lrt: f64,
    pub lrt_pvalue: f64,
    pub wald: f64,
    pub wald_pvalue: f64,
}

pub fn mlogit_balance(frame: &ExperimentFrame, a: &Assignment, studentization: Studentization) -> Result<LogitBalance> {
    let q = frame.arms();
    let j = frame.j();
    let x = frame.covariates();
    let fit = mlogit_fit(a.arms(), q, x)?;
    let beta = fit.slopes();
    let cov = match studentization {
        Studentization::Classic => fit.slope_cov(),
        Studentization::Ehw => {
            let full = mlogit_sandwich(&fit, a.arms(), x)?;
            let p = j + 1;
            let idx: Vec<usize> = (0..q - 1).flat_map(|l| (1..p).map(move |k| l * p + k)).collect();
            sub_block(&full, &idx)
        }
    };
    let mut z = Vec::with_capacity(beta.len());
    let mut z_pvalues = Vec::with_capacity(beta.len());
    for k in 0..beta.len() {
        let zk = beta[k] / cov[(k, k)].sqrt();
        z.push(zk);
        z_pvalues.push(two_sided_normal(zk)?);
    }
    let df = j * (q - 1);
    let lrt = mlogit_lrt(&fit, a.arms(), x)?;
    let lrt_pvalue = sf(DistributionId::ChiSquare { df }, lrt)?;
    let wald = wald_stat(&beta, &cov)?;
    let wald_pvalue = sf(DistributionId::ChiSquare { df }, wald)?;
    Ok(LogitBalance {
        beta,
        cov,
        z,
        z_pvalues,
        lrt,
        lrt_pvalue,
        wald,
        wald_pvalue,
    })
}

/// Two-arm logistic regression; identical to the multinomial path with
/// the control arm as reference.
pub fn logit_balance(frame: &ExperimentFrame, a: &Assignment, studentization: Studentization) -> Result<LogitBalance> {
    frame.require_arms(2)?;
    mlogit_balance(frame, a, studentization)
}

/// One-way ANOVA `F_j` per covariate against `F_{Q−1, N−Q}`.
pub fn f_balance(frame: &ExperimentFrame, a: &Assignment) -> Result<(Vec<f64>, Vec<f64>)> {
    let q = frame.arms();
    let n = frame.n();
    let means = frame.arm_means(a);
    let sizes = frame.arm_sizes();
    let mut stats = Vec::with_capacity(frame.j());
    let mut pvalues = Vec::with_capacity(frame.j());
    for k in 0..frame.j() {
        let between: f64 = (0..q).map(|l| sizes[l] as f64 * means[(l, k)] * means[(l, k)]).sum();
        let within = frame.s2x()[(k, k)] * (n as f64 - 1.0) - between;
        if !(within > 1e-12 * frame.s2x()[(k, k)] * n as f64) {
            return Err(Error::DegenerateWithinVariance(k));
        }
        let f = ((between / (q - 1) as f64) / (within / (n - q) as f64)).max(0.0);
        stats.push(f);
        pvalues.push(sf(DistributionId::F { df1: q - 1, df2: n - q }, f)?);
    }
    Ok((stats, pvalues))
}

/// Mahalanobis distance of `τ̂_x` under its exact randomization covariance
/// `(1/N₁ + 1/N₀) S²_x`, and whether it is within `a0`.
pub fn rem_check(frame: &ExperimentFrame, a: &Assignment, a0: f64) -> Result<(f64, bool)> {
    frame.require_arms(2)?;
    let s = frame.arm_sizes();
    let scale = 1.0 / s[0] as f64 + 1.0 / s[1] as f64;
    let d = mahalanobis(&frame.tau_x(a), &frame.s2x().scale(scale))?;
    Ok((d, d <= a0))
}

fn taux_hat(frame: &ExperimentFrame, a: &Assignment) -> Vec<f64> {
    if frame.arms() == 2 {
        frame.tau_x(a).iter().copied().collect()
    } else {
        let m = frame.arm_means(a);
        // stacked by arm
        m.transpose().iter().copied().collect()
    }
}

/// Applies a scheme to one allocation.
///
/// Marginal statistics are computed only under the marginal and consensus
/// rules, the joint statistic only under the joint and consensus rules. A
/// multinomial logit fit that fails marks the allocation as rejected and
/// increments the `mle_failures` counter.
pub fn evaluate(frame: &ExperimentFrame, a: &Assignment, scheme: &BalanceScheme) -> Result<BalanceReport> {
    let q = frame.arms();
    let j = frame.j();
    scheme.validate(j, q)?;
    if a.len() != frame.n() || a.levels() != q {
        return Err(Error::DimMismatch {
            expected: frame.n(),
            found: a.len(),
        });
    }
    let rule = scheme.rule;
    let stud = scheme.studentization;
    let mut report = BalanceReport {
        marginal_stats: Vec::new(),
        marginal_pvalues: Vec::new(),
        joint_stat: None,
        joint_pvalue: None,
        taux_hat: taux_hat(frame, a),
        accepted: false,
        diagnostics: BTreeMap::new(),
    };
    let set_joint = |r: &mut BalanceReport, (s, p): (f64, f64)| {
        r.joint_stat = Some(s);
        r.joint_pvalue = Some(p);
    };
    match scheme.model {
        Model::T => {
            if rule.uses_marginal() {
                (report.marginal_stats, report.marginal_pvalues) = t_marginal(frame, a, stud)?;
            }
            if rule.uses_joint() {
                set_joint(&mut report, t_joint(frame, a, scheme.joint_reference, stud)?);
            }
        }
        Model::Lm => {
            let lm = lm_balance(frame, a, stud)?;
            if rule.uses_marginal() {
                report.marginal_stats = lm.t.clone();
                report.marginal_pvalues = lm.t_pvalues.clone();
            }
            if rule.uses_joint() {
                let pair = match scheme.joint_reference {
                    JointReference::Wald => (lm.wald, lm.wald_pvalue),
                    _ => (lm.f, lm.f_pvalue),
                };
                set_joint(&mut report, pair);
            }
        }
        Model::Logit | Model::Mlogit => match mlogit_balance(frame, a, stud) {
            Ok(lb) => {
                if rule.uses_marginal() {
                    report.marginal_stats = lb.z.clone();
                    report.marginal_pvalues = lb.z_pvalues.clone();
                }
                if rule.uses_joint() {
                    let pair = match scheme.joint_reference {
                        JointReference::Wald => (lb.wald, lb.wald_pvalue),
                        _ => (lb.lrt, lb.lrt_pvalue),
                    };
                    set_joint(&mut report, pair);
                }
            }
            Err(Error::Separation | Error::NoConvergence(_) | Error::NotPositiveDefinite { .. }) => {
                report.diagnostics.insert("mle_failures".into(), 1);
                return Ok(report);
            }
            Err(e) => return Err(e),
        },
        Model::F => {
            (report.marginal_stats, report.marginal_pvalues) = f_balance(frame, a)?;
        }
        Model::Rem => {
            let a0 = scheme.joint_threshold(j)?;
            let (d, _) = rem_check(frame, a, a0)?;
            set_joint(&mut report, (d, sf(DistributionId::ChiSquare { df: j }, d)?));
        }
    }
    let marginal_ok = if rule.uses_marginal() {
        let alpha = scheme.marginal_alphas(j, q)?;
        report.marginal_pvalues.iter().zip(alpha.iter()).all(|(p, a)| p >= a)
    } else {
        true
    };
    let joint_ok = if rule.uses_joint() {
        report.joint_pvalue.unwrap_or(0.0) >= scheme.alpha_joint.unwrap_or(1.0)
    } else {
        true
    };
    report.accepted = marginal_ok && joint_ok;
    Ok(report)
}
