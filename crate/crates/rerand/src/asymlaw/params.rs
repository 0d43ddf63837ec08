use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{empirical_quantile, sample_constrained, ConstrainedLaw};
use crate::balance::{BalanceScheme, ExperimentFrame, Model, Rule};
use crate::design::RngStream;
use crate::error::{Error, Result};
use crate::estimate::{EffectEstimate, Kind};
use crate::numerics::{
    invert_spd, psd_factor, quantile, sigma_and_corr, sym_inv_sqrt, sym_sqrt, DistributionId, SymMatrix,
};

/// The limiting law `v_L^{1/2} ε + loading · scale · 𝒯` of
/// `√N (estimate − estimand)`, with `ε` standard normal and `𝒯 ~ law`
/// independent.
#[derive(Debug, Clone, Serialize)]
pub struct LawParams {
    pub v_l: SymMatrix,
    /// `c_*ᵀ` (two arms) or `Γ_*` (general).
    #[serde(serialize_with = "ser_matrix")]
    pub loading: DMatrix<f64>,
    /// Map from the constrained variable to the scaled covariate imbalance.
    #[serde(serialize_with = "ser_matrix")]
    pub scale: DMatrix<f64>,
    pub law: ConstrainedLaw,
}

fn ser_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    serde::Serialize::serialize(&crate::numerics::matrix_rows(m), s)
}

impl LawParams {
    /// `loading · scale`, mapping the constrained variable to estimator space.
    pub fn project(&self) -> DMatrix<f64> {
        &self.loading * &self.scale
    }

    /// Law of `G · estimate` for a contrast matrix `G`.
    pub fn contrast(&self, g: &DMatrix<f64>) -> Result<LawParams> {
        if g.ncols() != self.v_l.dim() {
            return Err(Error::DimMismatch {
                expected: self.v_l.dim(),
                found: g.ncols(),
            });
        }
        Ok(LawParams {
            v_l: self.v_l.congruence(g),
            loading: g * &self.loading,
            scale: self.scale.clone(),
            law: self.law.clone(),
        })
    }

    /// Covariance of the law if the constraint were dropped.
    pub fn unconstrained_cov(&self) -> SymMatrix {
        let p = self.project();
        SymMatrix::symmetrize(self.v_l.matrix() + self.law.cov.congruence(&p).into_inner())
    }
}

/// Constrained law of a two-arm scheme and the map `M` from it to
/// `v_x⁻¹ √N τ̂_x`.
///
/// Joint rules (all models, and `rem`) give the ball `𝓛` with
/// `M = v_x^{-1/2}`; t and F marginal rules give `𝒯_t` over `D(v_x)` with
/// `M = v_x⁻¹σ(v_x)`; regression-based marginal rules give `𝒯_lm` over
/// `D(v_x⁻¹)` with `M = σ(v_x⁻¹)`. Consensus adds the Wald ellipsoid.
pub fn scheme_law_two_arm(frame: &ExperimentFrame, scheme: &BalanceScheme) -> Result<(ConstrainedLaw, DMatrix<f64>)> {
    frame.require_arms(2)?;
    let j = frame.j();
    scheme.validate(j, 2)?;
    let v_x = frame.v_x()?;
    if scheme.rule == Rule::Joint {
        let law = ConstrainedLaw::ball(j, scheme.joint_threshold(j)?)?;
        return Ok((law, sym_inv_sqrt(&v_x)?.into_inner()));
    }
    let a = scheme.marginal_box(j, 2)?;
    let (corr, scale) = match scheme.model {
        Model::T | Model::F => {
            let (sigma, corr) = sigma_and_corr(&v_x)?;
            (corr, invert_spd(&v_x)?.matrix() * sigma)
        }
        Model::Lm | Model::Logit | Model::Mlogit => {
            let (sigma, corr) = sigma_and_corr(&invert_spd(&v_x)?)?;
            (corr, sigma)
        }
        Model::Rem => unreachable!("rem is joint-only after validation"),
    };
    let mut law = ConstrainedLaw::normal(corr.clone()).with_box(a)?;
    if scheme.rule == Rule::Consensus {
        law = law.with_ellipsoid(corr, scheme.joint_threshold(j)?)?;
    }
    Ok((law, scale))
}

/// Two-arm plug-in law for `estimate`, using `N·ŝe_L²` for `v_L` and `ĉ_N`
/// or `ĉ_F` as the loading.
pub fn build_law_params_two_arm(
    frame: &ExperimentFrame,
    scheme: &BalanceScheme,
    estimate: &EffectEstimate,
) -> Result<LawParams> {
    let (law, scale) = scheme_law_two_arm(frame, scheme)?;
    if estimate.point.len() != 1 {
        return Err(Error::WrongArmCount {
            expected: 2,
            found: estimate.point.len(),
        });
    }
    let missing = || Error::InvalidInput("estimate lacks per-arm regression slopes".into());
    let v_l = estimate.lin_var.clone().ok_or_else(missing)?;
    let c = match estimate.kind {
        Kind::L => vec![0.0; frame.j()],
        Kind::N => estimate.c_hats.as_ref().ok_or_else(missing)?.c_n.clone(),
        Kind::F => estimate.c_hats.as_ref().ok_or_else(missing)?.c_f.clone(),
    };
    Ok(LawParams {
        v_l,
        loading: DMatrix::from_row_slice(1, c.len(), &c),
        scale,
        law,
    })
}

/// Population-side matrices of a `Q`-arm design. Vectors over arms and
/// covariates are stacked arm-major; `+` quantities drop the last arm.
#[derive(Debug, Clone)]
pub struct MultiArmGeometry {
    pub shares: Vec<f64>,
    /// `(diag(e)⁻¹ − 11ᵀ) ⊗ S²_x`, singular.
    pub v_x: SymMatrix,
    /// `(R₊⁻¹ − 11ᵀ) ⊗ S²_x`
    pub v_xplus: SymMatrix,
    /// `diag(e₊) − e₊e₊ᵀ`
    pub phi: SymMatrix,
    /// `(Φ⁻¹R₊) ⊗ (S²_x)⁻¹`
    pub psi: DMatrix<f64>,
    /// `Φ⁻¹ ⊗ (S²_x)⁻¹`
    pub v_psi: SymMatrix,
    /// `(I, −e_Q⁻¹e₊)ᵀ ⊗ I_J`, recovering all arm means from the first `Q − 1`.
    pub lift: DMatrix<f64>,
}

pub fn multi_arm_geometry(frame: &ExperimentFrame) -> Result<MultiArmGeometry> {
    let e = frame.shares();
    let q = e.len();
    let j = frame.j();
    let s2 = frame.s2x().matrix();
    let s2_inv = invert_spd(frame.s2x())?.into_inner();
    let ep = &e[..q - 1];
    let ones = |n: usize| DMatrix::from_element(n, n, 1.0);
    let diag_inv = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_iterator(v.len(), v.iter().map(|x| 1.0 / x)));
    let v_x = SymMatrix::symmetrize((diag_inv(&e) - ones(q)).kronecker(s2));
    let v_xplus = SymMatrix::symmetrize((diag_inv(ep) - ones(q - 1)).kronecker(s2));
    let epv = DVector::from_column_slice(ep);
    let r_plus = DMatrix::from_diagonal(&epv);
    let phi = SymMatrix::symmetrize(&r_plus - &epv * epv.transpose());
    let phi_inv = invert_spd(&phi)?.into_inner();
    let psi = (&phi_inv * &r_plus).kronecker(&s2_inv);
    let v_psi = SymMatrix::symmetrize(phi_inv.kronecker(&s2_inv));
    let mut pick = DMatrix::<f64>::zeros(q, q - 1);
    for k in 0..q - 1 {
        pick[(k, k)] = 1.0;
        pick[(q - 1, k)] = -ep[k] / e[q - 1];
    }
    let lift = pick.kronecker(&DMatrix::<f64>::identity(j, j));
    Ok(MultiArmGeometry {
        shares: e,
        v_x,
        v_xplus,
        phi,
        psi,
        v_psi,
        lift,
    })
}

/// `Γ_*` (`Q × QJ`, block diagonal) from per-arm slopes `γ_q`: blocks
/// `γ_qᵀ` for `N`, `(γ_q − Σ e_q γ_q)ᵀ` for `F`, zero for `L`.
pub fn gamma_matrix(kind: Kind, slopes: &[DVector<f64>], shares: &[f64]) -> Result<DMatrix<f64>> {
    let q = shares.len();
    if slopes.len() != q {
        return Err(Error::DimMismatch {
            expected: q,
            found: slopes.len(),
        });
    }
    let j = slopes.first().map_or(0, |s| s.len());
    let mut centre = DVector::<f64>::zeros(j);
    if kind == Kind::F {
        for (g, e) in slopes.iter().zip(shares) {
            centre += g * *e;
        }
    }
    let mut out = DMatrix::<f64>::zeros(q, q * j);
    if kind != Kind::L {
        for (k, g) in slopes.iter().enumerate() {
            if g.len() != j {
                return Err(Error::DimMismatch {
                    expected: j,
                    found: g.len(),
                });
            }
            for c in 0..j {
                out[(k, k * j + c)] = g[c] - centre[c];
            }
        }
    }
    Ok(out)
}

/// Constrained law of a `Q`-arm scheme and the map from it to the stacked
/// scaled arm means `√N x̂`.
///
/// Marginal F tests give `𝒯_f` (arm-sum constraint, identity map). The
/// multinomial logit gives `𝓛` with map `lift · V_{x+}^{1/2}` for the joint
/// rule and `𝒯_logit` over `D(V_Ψ)` with map `lift · Ψ⁻¹σ(V_Ψ)` otherwise.
/// Two-arm schemes are accepted when `Q = 2`.
pub fn scheme_law_multi_arm(frame: &ExperimentFrame, scheme: &BalanceScheme) -> Result<(ConstrainedLaw, DMatrix<f64>)> {
    let q = frame.arms();
    let j = frame.j();
    scheme.validate(j, q)?;
    let geo = multi_arm_geometry(frame)?;
    match scheme.model {
        Model::F => {
            let alphas = scheme.marginal_alphas(j, q)?;
            let s2 = frame.s2x();
            let bounds = alphas
                .iter()
                .enumerate()
                .map(|(k, a)| Ok(quantile(DistributionId::ChiSquare { df: q - 1 }, 1.0 - a)? * s2[(k, k)]))
                .collect::<Result<Vec<f64>>>()?;
            let law = ConstrainedLaw::normal(geo.v_x.clone()).with_arm_sum(geo.shares.clone(), bounds)?;
            Ok((law, DMatrix::identity(q * j, q * j)))
        }
        Model::Mlogit => {
            let d = j * (q - 1);
            let a0 = || scheme.joint_threshold(d);
            if scheme.rule == Rule::Joint {
                let law = ConstrainedLaw::ball(d, a0()?)?;
                return Ok((law, &geo.lift * sym_sqrt(&geo.v_xplus).matrix()));
            }
            let (sigma, corr) = sigma_and_corr(&geo.v_psi)?;
            let psi_inv = geo
                .psi
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::InvalidInput("Ψ is singular".into()))?;
            let mut law = ConstrainedLaw::normal(corr.clone()).with_box(scheme.marginal_box(j, q)?)?;
            if scheme.rule == Rule::Consensus {
                law = law.with_ellipsoid(corr, a0()?)?;
            }
            Ok((law, &geo.lift * psi_inv * sigma))
        }
        _ => {
            // x̂(0) = e₁ τ̂_x and x̂(1) = −e₀ τ̂_x; the two-arm map targets v_x⁻¹ √N τ̂_x.
            let (law, m) = scheme_law_two_arm(frame, scheme)?;
            let e = &geo.shares;
            let v_x = frame.v_x()?;
            let to_tau = v_x.matrix() * m;
            let mut stacked = DMatrix::<f64>::zeros(2 * j, to_tau.ncols());
            stacked.rows_mut(0, j).copy_from(&(&to_tau * e[1]));
            stacked.rows_mut(j, j).copy_from(&(&to_tau * -e[0]));
            Ok((law, stacked))
        }
    }
}

/// General-`Q` law from per-arm slopes and `V_L` (experimental for plug-in
/// use: slopes and `V_L` are usually estimates).
pub fn build_law_params_multi_arm(
    frame: &ExperimentFrame,
    scheme: &BalanceScheme,
    kind: Kind,
    slopes: &[DVector<f64>],
    v_l: SymMatrix,
) -> Result<LawParams> {
    let (law, scale) = scheme_law_multi_arm(frame, scheme)?;
    let loading = gamma_matrix(kind, slopes, &frame.shares())?;
    if v_l.dim() != frame.arms() {
        return Err(Error::DimMismatch {
            expected: frame.arms(),
            found: v_l.dim(),
        });
    }
    Ok(LawParams {
        v_l,
        loading,
        scale,
        law,
    })
}

/// Monte Carlo quantiles of each component of the convolution law, as
/// `[component][prob]`.
pub fn convolution_quantiles(
    params: &LawParams,
    probs: &[f64],
    n_draws: usize,
    stream: &RngStream,
) -> Result<Vec<Vec<f64>>> {
    if let Some(&p) = probs.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::ProbabilityOutOfRange(p));
    }
    let k = params.v_l.dim();
    let eps = sample_constrained(
        &ConstrainedLaw::normal(SymMatrix::identity(k)),
        n_draws,
        &stream.derive(1),
    )?;
    let mut total = psd_factor(&params.v_l)? * eps;
    let p = params.project();
    if p.amax() > 0.0 {
        let t = sample_constrained(&params.law, n_draws, &stream.derive(2))?;
        total += p * t;
    }
    Ok(total
        .row_iter()
        .map(|row| {
            let mut v: Vec<f64> = row.iter().copied().collect();
            v.sort_by(f64::total_cmp);
            probs.iter().map(|&p| empirical_quantile(&v, p)).collect()
        })
        .collect())
}
