//! Regression estimators of treatment effects with EHW standard errors and
//! rerandomization-aware plug-in intervals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::asymlaw::{build_law_params_multi_arm, build_law_params_two_arm, convolution_quantiles};
use crate::balance::{Assignment, BalanceScheme, ExperimentFrame};
use crate::design::RngStream;
use crate::error::{Error, Result};
use crate::numerics::{normal_quantile, SymMatrix};
use crate::regression::ols_fit;

pub const DEFAULT_LAW_DRAWS: usize = 100_000;

/// Estimator family: unadjusted (`N`), additive regression (`F`), or fully
/// interacted regression (`L`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    N,
    F,
    L,
}

impl Kind {
    pub const ALL: [Kind; 3] = [Kind::N, Kind::F, Kind::L];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// `ĉ_N` and `ĉ_F` for two arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CHats {
    pub c_n: Vec<f64>,
    pub c_f: Vec<f64>,
}

/// A point estimate with its EHW covariance and intervals.
///
/// Two-arm estimates have a single component (treatment minus control).
/// Multi-arm estimates hold one adjusted mean per arm until a contrast is
/// applied.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub kind: Kind,
    pub n: usize,
    pub level: f64,
    pub point: Vec<f64>,
    pub ehw_cov: SymMatrix,
    pub normal_ci: Vec<Interval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plugin_ci: Option<Vec<Interval>>,
    /// Per-arm slopes `γ̂_{L,q}` from `lm(Y ~ 1 + x)` within each arm; empty
    /// when an arm is too small to fit.
    pub gamma_hats: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_hats: Option<CHats>,
    /// `N` times the EHW covariance of the `L` estimator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lin_var: Option<SymMatrix>,
    /// `τ̂_x` (two arms only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tau_x: Vec<f64>,
    /// `γ̂_*` with `point = τ̂_N − τ̂_xᵀγ̂_*` (two arms only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gamma: Vec<f64>,
}

impl EffectEstimate {
    pub fn se(&self, k: usize) -> f64 {
        self.ehw_cov[(k, k)].sqrt()
    }

    /// Estimate of `G · (arm means)`.
    pub fn contrast(&self, g: &Contrast) -> Result<EffectEstimate> {
        let (point, cov) = apply_contrast(&DVector::from_column_slice(&self.point), &self.ehw_cov, g)?;
        let point: Vec<f64> = point.iter().copied().collect();
        Ok(EffectEstimate {
            normal_ci: normal_intervals(&point, &cov, self.level),
            point,
            ehw_cov: cov,
            plugin_ci: None,
            c_hats: None,
            lin_var: self.lin_var.as_ref().map(|v| v.congruence(g.matrix())),
            tau_x: Vec::new(),
            gamma: Vec::new(),
            ..self.clone()
        })
    }
}

/// A contrast matrix whose rows each sum to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Contrast(DMatrix<f64>);

impl Contrast {
    pub fn new(g: DMatrix<f64>) -> Result<Self> {
        if g.nrows() == 0 || g.ncols() < 2 {
            return Err(Error::InvalidInput(
                "contrast needs at least one row and two columns".into(),
            ));
        }
        for (r, row) in g.row_iter().enumerate() {
            if row.amax() == 0.0 {
                return Err(Error::InvalidInput(format!("contrast row {} is zero", r + 1)));
            }
            if row.sum().abs() > 1e-12 * row.amax().max(1.0) {
                return Err(Error::InvalidInput(format!(
                    "contrast row {} sums to {}, not 0",
                    r + 1,
                    row.sum()
                )));
            }
        }
        Ok(Self(g))
    }

    /// `(1, −1)`
    pub fn two_arm() -> Self {
        Self(DMatrix::from_row_slice(1, 2, &[1.0, -1.0]))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// `(G ŷ, G V Gᵀ)`
pub fn apply_contrast(y: &DVector<f64>, v: &SymMatrix, g: &Contrast) -> Result<(DVector<f64>, SymMatrix)> {
    let g = g.matrix();
    if g.ncols() != y.len() || v.dim() != y.len() {
        return Err(Error::DimMismatch {
            expected: y.len(),
            found: g.ncols(),
        });
    }
    Ok((g * y, v.congruence(g)))
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::ProbabilityOutOfRange(level))
    }
}

fn normal_intervals(point: &[f64], cov: &SymMatrix, level: f64) -> Vec<Interval> {
    let z = normal_quantile(0.5 + level / 2.0);
    point
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let h = z * cov[(k, k)].max(0.0).sqrt();
            Interval {
                lower: p - h,
                upper: p + h,
            }
        })
        .collect()
}

fn check_outcomes(frame: &ExperimentFrame, a: &Assignment, y: &[f64]) -> Result<()> {
    for len in [a.len(), y.len()] {
        if len != frame.n() {
            return Err(Error::DimMismatch {
                expected: frame.n(),
                found: len,
            });
        }
    }
    if a.counts() != frame.arm_sizes() {
        return Err(Error::InvalidInput(
            "assignment does not match the frame's arm sizes".into(),
        ));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("outcome {} is not finite", i + 1)));
    }
    Ok(())
}

/// Within-arm slopes of `lm(Y ~ 1 + x)`.
pub fn per_arm_slopes(frame: &ExperimentFrame, a: &Assignment, y: &[f64]) -> Result<Vec<DVector<f64>>> {
    let j = frame.j();
    let x = frame.covariates();
    (0..frame.arms())
        .map(|q| {
            let rows: Vec<usize> = (0..frame.n()).filter(|&i| a.arms()[i] == q).collect();
            if rows.len() < j + 2 {
                return Err(Error::ArmTooSmall {
                    arm: q,
                    size: rows.len(),
                    needed: j + 2,
                });
            }
            let design = DMatrix::from_fn(rows.len(), j + 1, |r, c| if c == 0 { 1.0 } else { x[(rows[r], c - 1)] });
            let resp = DVector::from_iterator(rows.len(), rows.iter().map(|&i| y[i]));
            Ok(ols_fit(&design, &resp)?.coefficients.rows(1, j).into_owned())
        })
        .collect()
}

/// Arm-indicator design; `F` appends `x`, `L` appends `I_q x` per arm.
fn arm_design(frame: &ExperimentFrame, a: &Assignment, kind: Kind) -> DMatrix<f64> {
    let (n, j, q) = (frame.n(), frame.j(), frame.arms());
    let x = frame.covariates();
    let extra = match kind {
        Kind::N => 0,
        Kind::F => j,
        Kind::L => q * j,
    };
    let mut d = DMatrix::<f64>::zeros(n, q + extra);
    for i in 0..n {
        let arm = a.arms()[i];
        d[(i, arm)] = 1.0;
        for k in 0..j {
            match kind {
                Kind::N => {}
                Kind::F => d[(i, q + k)] = x[(i, k)],
                Kind::L => d[(i, q + arm * j + k)] = x[(i, k)],
            }
        }
    }
    d
}

/// Adjusted arm means `Ŷ_*` and their HC0 covariance.
fn arm_means(frame: &ExperimentFrame, a: &Assignment, y: &[f64], kind: Kind) -> Result<(Vec<f64>, SymMatrix)> {
    let q = frame.arms();
    let fit = ols_fit(&arm_design(frame, a, kind), &DVector::from_column_slice(y))?;
    let idx: Vec<usize> = (0..q).collect();
    let cov = crate::regression::sub_block(&fit.ehw_cov, &idx);
    Ok((fit.coefficients.rows(0, q).iter().copied().collect(), cov))
}

fn slopes_or_none(frame: &ExperimentFrame, a: &Assignment, y: &[f64], kind: Kind) -> Result<Option<Vec<DVector<f64>>>> {
    match per_arm_slopes(frame, a, y) {
        Ok(s) => Ok(Some(s)),
        Err(Error::ArmTooSmall { .. } | Error::RankDeficient(_)) if kind != Kind::L => Ok(None),
        Err(e) => Err(e),
    }
}

/// `Ŷ_*` for any number of arms, from the regression of `Y` on arm
/// indicators (no intercept), plus centered covariates for `F` and their
/// arm interactions for `L`.
pub fn estimate_multi_arm(
    frame: &ExperimentFrame,
    a: &Assignment,
    y: &[f64],
    kind: Kind,
    level: f64,
) -> Result<EffectEstimate> {
    check_level(level)?;
    check_outcomes(frame, a, y)?;
    let slopes = slopes_or_none(frame, a, y, kind)?;
    let (point, ehw_cov) = arm_means(frame, a, y, kind)?;
    let n = frame.n();
    let lin_var = match (&slopes, kind) {
        (_, Kind::L) => Some(ehw_cov.scale(n as f64)),
        (Some(_), _) => Some(arm_means(frame, a, y, Kind::L)?.1.scale(n as f64)),
        (None, _) => None,
    };
    let c_hats = match &slopes {
        Some(s) if frame.arms() == 2 => Some(c_hats(frame, s)),
        _ => None,
    };
    Ok(EffectEstimate {
        kind,
        n,
        level,
        normal_ci: normal_intervals(&point, &ehw_cov, level),
        point,
        ehw_cov,
        plugin_ci: None,
        gamma_hats: slopes
            .map(|s| s.iter().map(|g| g.iter().copied().collect()).collect())
            .unwrap_or_default(),
        c_hats,
        lin_var,
        tau_x: Vec::new(),
        gamma: Vec::new(),
    })
}

fn c_hats(frame: &ExperimentFrame, slopes: &[DVector<f64>]) -> CHats {
    let (c_n, c_f) = c_vectors(frame.s2x(), &frame.shares(), slopes);
    CHats {
        c_n: c_n.iter().copied().collect(),
        c_f: c_f.iter().copied().collect(),
    }
}

/// `(c_N, c_F)` from two-arm slopes, treatment arm first:
/// `c_N = S²_x(γ_t/e_t + γ_c/e_c)` and `c_F = S²_x(1/e_t − 1/e_c)(γ_t − γ_c)`.
pub fn c_vectors(s2x: &SymMatrix, shares: &[f64], slopes: &[DVector<f64>]) -> (DVector<f64>, DVector<f64>) {
    let (e_t, e_c) = (shares[0], shares[1]);
    let (g_t, g_c) = (&slopes[0], &slopes[1]);
    let s2 = s2x.matrix();
    let c_n = s2 * (g_c / e_c + g_t / e_t);
    let c_f = s2 * (g_t - g_c) * (1.0 / e_t - 1.0 / e_c);
    (c_n, c_f)
}

/// Treatment-minus-control estimate for two arms.
///
/// `N` is the difference in means, `F` the coefficient of `Z` in
/// `lm(Y ~ 1 + Z + x)`, and `L` the coefficient of `Z` in
/// `lm(Y ~ 1 + Z + x + Z x)` with centered `x`. Variances are HC0.
pub fn estimate_two_arm(
    frame: &ExperimentFrame,
    a: &Assignment,
    y: &[f64],
    kind: Kind,
    level: f64,
) -> Result<EffectEstimate> {
    frame.require_arms(2)?;
    let arm = estimate_multi_arm(frame, a, y, kind, level)?;
    let mut est = arm.contrast(&Contrast::two_arm())?;
    est.c_hats = arm.c_hats;
    let e = frame.shares();
    let tau_x = frame.tau_x(a);
    let gamma = match kind {
        Kind::N => DVector::zeros(frame.j()),
        Kind::F => {
            let fit = ols_fit(&arm_design(frame, a, Kind::F), &DVector::from_column_slice(y))?;
            fit.coefficients.rows(2, frame.j()).into_owned()
        }
        Kind::L => {
            let g: Vec<DVector<f64>> = arm.gamma_hats.iter().map(|g| DVector::from_column_slice(g)).collect();
            &g[0] * e[1] + &g[1] * e[0]
        }
    };
    est.tau_x = tau_x.iter().copied().collect();
    est.gamma = gamma.iter().copied().collect();
    Ok(est)
}

/// All three two-arm estimates.
pub fn estimate_two_arm_all(
    frame: &ExperimentFrame,
    a: &Assignment,
    y: &[f64],
    level: f64,
) -> Result<[EffectEstimate; 3]> {
    Ok([
        estimate_two_arm(frame, a, y, Kind::N, level)?,
        estimate_two_arm(frame, a, y, Kind::F, level)?,
        estimate_two_arm(frame, a, y, Kind::L, level)?,
    ])
}

/// Equal-tailed plug-in interval for a two-arm estimate under `scheme`.
///
/// Samples `v̂_L^{1/2} ε + ĉ_*ᵀ M 𝒯` and inverts its `(1 ∓ level)/2`
/// quantiles. For `L` the law is normal and the normal interval is
/// returned unchanged.
pub fn plugin_inference(
    estimate: &EffectEstimate,
    frame: &ExperimentFrame,
    scheme: &BalanceScheme,
    level: f64,
    law_draws: usize,
    stream: &RngStream,
) -> Result<Interval> {
    check_level(level)?;
    if estimate.kind == Kind::L {
        return Ok(normal_intervals(&estimate.point, &estimate.ehw_cov, level)[0]);
    }
    let params = build_law_params_two_arm(frame, scheme, estimate)?;
    let q = convolution_quantiles(&params, &[(1.0 - level) / 2.0, (1.0 + level) / 2.0], law_draws, stream)?;
    let root_n = (estimate.n as f64).sqrt();
    let p = estimate.point[0];
    Ok(Interval {
        lower: p - q[0][1] / root_n,
        upper: p - q[0][0] / root_n,
    })
}

/// Plug-in intervals for `G Ŷ_*` under a multi-arm scheme (experimental),
/// from per-arm estimates as returned by [`estimate_multi_arm`].
pub fn plugin_inference_multi_arm(
    estimate: &EffectEstimate,
    frame: &ExperimentFrame,
    scheme: &BalanceScheme,
    contrast: &Contrast,
    level: f64,
    law_draws: usize,
    stream: &RngStream,
) -> Result<Vec<Interval>> {
    check_level(level)?;
    let target = estimate.contrast(contrast)?;
    if estimate.kind == Kind::L {
        return Ok(target.normal_ci);
    }
    let missing = || Error::InvalidInput("estimate lacks per-arm regression slopes".into());
    let v_l = estimate.lin_var.clone().ok_or_else(missing)?;
    if estimate.gamma_hats.is_empty() {
        return Err(missing());
    }
    let slopes: Vec<DVector<f64>> = estimate
        .gamma_hats
        .iter()
        .map(|g| DVector::from_column_slice(g))
        .collect();
    let params = build_law_params_multi_arm(frame, scheme, estimate.kind, &slopes, v_l)?.contrast(contrast.matrix())?;
    let q = convolution_quantiles(&params, &[(1.0 - level) / 2.0, (1.0 + level) / 2.0], law_draws, stream)?;
    let root_n = (estimate.n as f64).sqrt();
    Ok(target
        .point
        .iter()
        .zip(q)
        .map(|(p, q)| Interval {
            lower: p - q[1] / root_n,
            upper: p - q[0] / root_n,
        })
        .collect())
}
