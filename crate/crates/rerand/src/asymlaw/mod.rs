//! Truncated normal laws describing covariate imbalance under rerandomization,
//! and the convolution laws of the effect estimators built from them.

mod params;

pub use params::{
    build_law_params_multi_arm, build_law_params_two_arm, convolution_quantiles, gamma_matrix, multi_arm_geometry,
    scheme_law_multi_arm, scheme_law_two_arm, LawParams, MultiArmGeometry,
};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::design::RngStream;
use crate::error::{Error, Result};
use crate::numerics::{invert_spd, psd_factor, SymMatrix};

const CHUNK: usize = 8192;
const MIN_PROPOSALS: u64 = 100_000;
const MIN_ACCEPTANCE: f64 = 1e-4;

/// `εᵀ metric⁻¹ ε ≤ radius`.
#[derive(Debug, Clone, Serialize)]
pub struct Ellipsoid {
    pub metric: SymMatrix,
    pub radius: f64,
    #[serde(skip)]
    metric_inv: SymMatrix,
}

/// `Σ_q w_q ε_{qj}² ≤ bound_j` for each covariate `j`, with `ε` stacked
/// arm-major (`index = q·J + j`).
#[derive(Debug, Clone, Serialize)]
pub struct ArmSumConstraint {
    pub weights: Vec<f64>,
    pub bounds: Vec<f64>,
}

/// A centered normal vector conditioned on a symmetric convex set given by
/// any combination of a box, an ellipsoid, and an arm-sum constraint.
#[derive(Debug, Clone, Serialize)]
pub struct ConstrainedLaw {
    pub cov: SymMatrix,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub box_limits: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ellipsoid: Option<Ellipsoid>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arm_sum: Option<ArmSumConstraint>,
}

impl ConstrainedLaw {
    /// `N(0, cov)` with no constraint yet.
    pub fn normal(cov: SymMatrix) -> Self {
        Self {
            cov,
            box_limits: None,
            ellipsoid: None,
            arm_sum: None,
        }
    }

    /// Standard normal in `dim` dimensions truncated to `‖ε‖² ≤ a0`.
    pub fn ball(dim: usize, a0: f64) -> Result<Self> {
        Self::normal(SymMatrix::identity(dim)).with_ellipsoid(SymMatrix::identity(dim), a0)
    }

    pub fn with_box(mut self, limits: Vec<f64>) -> Result<Self> {
        if limits.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                found: limits.len(),
            });
        }
        if limits.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::InvalidInput("box limits must be nonnegative".into()));
        }
        self.box_limits = Some(limits);
        Ok(self)
    }

    pub fn with_ellipsoid(mut self, metric: SymMatrix, radius: f64) -> Result<Self> {
        if metric.dim() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                found: metric.dim(),
            });
        }
        if !(radius >= 0.0) {
            return Err(Error::InvalidInput("ellipsoid radius must be nonnegative".into()));
        }
        let metric_inv = invert_spd(&metric)?;
        self.ellipsoid = Some(Ellipsoid {
            metric,
            radius,
            metric_inv,
        });
        Ok(self)
    }

    pub fn with_arm_sum(mut self, weights: Vec<f64>, bounds: Vec<f64>) -> Result<Self> {
        if weights.len() * bounds.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                found: weights.len() * bounds.len(),
            });
        }
        self.arm_sum = Some(ArmSumConstraint { weights, bounds });
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.cov.dim()
    }

    pub fn is_constrained(&self) -> bool {
        self.box_limits.is_some() || self.ellipsoid.is_some() || self.arm_sum.is_some()
    }

    pub fn contains(&self, eps: &[f64]) -> bool {
        if let Some(a) = &self.box_limits {
            if eps.iter().zip(a).any(|(e, a)| e.abs() > *a) {
                return false;
            }
        }
        if let Some(el) = &self.ellipsoid {
            let m = el.metric_inv.matrix();
            let d = eps.len();
            let mut q = 0.0;
            for i in 0..d {
                let mut row = 0.0;
                for k in 0..d {
                    row += m[(i, k)] * eps[k];
                }
                q += eps[i] * row;
            }
            if q > el.radius {
                return false;
            }
        }
        if let Some(c) = &self.arm_sum {
            let j = c.bounds.len();
            for (k, bound) in c.bounds.iter().enumerate() {
                let s: f64 = c
                    .weights
                    .iter()
                    .enumerate()
                    .map(|(q, w)| w * eps[q * j + k] * eps[q * j + k])
                    .sum();
                if s > *bound {
                    return false;
                }
            }
        }
        true
    }
}

/// `n` independent draws from `law` by rejection from the unconstrained
/// normal, returned as the columns of a `dim × n` matrix.
///
/// Draws are produced in fixed-size chunks; chunk `k` uses substream `k` of
/// `stream`, so the output does not depend on the thread count.
pub fn sample_constrained(law: &ConstrainedLaw, n: usize, stream: &RngStream) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::InvalidInput("need at least one draw".into()));
    }
    let d = law.dim();
    let factor = psd_factor(&law.cov)?;
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let want = CHUNK.min(n - k * CHUNK);
            sample_chunk(law, &factor, want, stream, k as u64)
        })
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(n * d);
    for p in parts {
        data.extend(p);
    }
    Ok(DMatrix::from_vec(d, n, data))
}

fn sample_chunk(
    law: &ConstrainedLaw,
    factor: &DMatrix<f64>,
    want: usize,
    stream: &RngStream,
    k: u64,
) -> Result<Vec<f64>> {
    let d = law.dim();
    let mut rng = stream.rng_at(k);
    let mut out = Vec::with_capacity(want * d);
    let mut z = vec![0.0; d];
    let mut eps = vec![0.0; d];
    let (mut proposals, mut accepted) = (0u64, 0usize);
    while accepted < want {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        for (i, e) in eps.iter_mut().enumerate() {
            *e = (0..d).map(|c| factor[(i, c)] * z[c]).sum();
        }
        proposals += 1;
        if law.contains(&eps) {
            out.extend_from_slice(&eps);
            accepted += 1;
        } else if proposals >= MIN_PROPOSALS && (accepted as f64) < MIN_ACCEPTANCE * proposals as f64 {
            return Err(Error::AcceptanceTooLow {
                proposals,
                accepted: accepted as u64,
            });
        }
    }
    Ok(out)
}

/// Order-statistic quantile of sorted data: the `⌈p n⌉`-th smallest value.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let k = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// Per-component mean and variance of the columns of `draws`.
pub fn draw_moments(draws: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = draws.ncols() as f64;
    let mean = draws.column_mean();
    let var = DVector::from_fn(draws.nrows(), |i, _| {
        draws.row(i).iter().map(|v| (v - mean[i]).powi(2)).sum::<f64>() / (n - 1.0)
    });
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{normal_cdf, quantile, rho, DistributionId};

    #[test]
    fn vacuous_box_is_normal() {
        let cov = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0])).unwrap();
        let law = ConstrainedLaw::normal(cov).with_box(vec![1e9, 1e9]).unwrap();
        let d = sample_constrained(&law, 100_000, &RngStream::new(1, 0)).unwrap();
        let (mean, var) = draw_moments(&d);
        assert!(mean.amax() < 0.02);
        assert_close!(var[0], 2.0, 0.04);
        assert_close!(var[1], 1.0, 0.02);
    }

    #[test]
    fn unit_box_variance() {
        let law = ConstrainedLaw::normal(SymMatrix::identity(1))
            .with_box(vec![1.0])
            .unwrap();
        let d = sample_constrained(&law, 200_000, &RngStream::new(2, 0)).unwrap();
        let phi = (-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let exact = 1.0 - 2.0 * phi / (2.0 * normal_cdf(1.0) - 1.0);
        assert_close!(exact, 0.2911, 1e-4);
        assert_close!(draw_moments(&d).1[0], exact, 0.01);
        assert!(d.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn ball_second_moment_is_rho() {
        let a0 = quantile(DistributionId::ChiSquare { df: 3 }, 0.45).unwrap();
        let law = ConstrainedLaw::ball(3, a0).unwrap();
        let d = sample_constrained(&law, 100_000, &RngStream::new(3, 0)).unwrap();
        let m = d.column_iter().map(|c| c.norm_squared()).sum::<f64>() / (3.0 * 100_000.0);
        assert_close!(m, rho(3, a0), 0.01);
    }

    #[test]
    fn arm_sum_constraint_holds() {
        let law = ConstrainedLaw::normal(SymMatrix::identity(4))
            .with_arm_sum(vec![0.3, 0.7], vec![0.5, 1.0])
            .unwrap();
        let d = sample_constrained(&law, 1000, &RngStream::new(4, 0)).unwrap();
        for c in d.column_iter() {
            assert!(0.3 * c[0] * c[0] + 0.7 * c[2] * c[2] <= 0.5);
            assert!(0.3 * c[1] * c[1] + 0.7 * c[3] * c[3] <= 1.0);
        }
    }

    #[test]
    fn tiny_region_fails() {
        let law = ConstrainedLaw::ball(6, 1e-6).unwrap();
        assert!(matches!(
            sample_constrained(&law, 10, &RngStream::new(5, 0)),
            Err(Error::AcceptanceTooLow { .. })
        ));
    }

    #[test]
    fn reproducible() {
        let law = ConstrainedLaw::ball(2, 1.0).unwrap();
        let s = RngStream::new(6, 1);
        assert_eq!(
            sample_constrained(&law, 20_000, &s).unwrap(),
            sample_constrained(&law, 20_000, &s).unwrap()
        );
    }

    #[test]
    fn order_statistics() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(empirical_quantile(&v, 0.5), 2.0);
        assert_eq!(empirical_quantile(&v, 0.51), 3.0);
        assert_eq!(empirical_quantile(&v, 1e-9), 1.0);
        assert_eq!(empirical_quantile(&v, 1.0), 4.0);
    }
}
