use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{sf, DistributionId, SymMatrix, PIVOT_TOL};

/// Heteroskedasticity-consistent covariance flavours.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcType {
    Hc0,
    Hc1,
    Hc2,
    Hc3,
}

#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    /// `RSS/(N − p) · (XᵀX)⁻¹`
    pub classic_cov: SymMatrix,
    /// HC0 sandwich.
    pub ehw_cov: SymMatrix,
    pub rss: f64,
    pub n: usize,
    pub p: usize,
    pub xtx_inv: SymMatrix,
    pub leverage: DVector<f64>,
}

impl OlsFit {
    /// Sandwich covariance of the requested type; `design` must be the
    /// matrix the fit was computed from.
    pub fn robust_cov(&self, design: &DMatrix<f64>, hc: HcType) -> SymMatrix {
        let weights: Vec<f64> = (0..self.n)
            .map(|i| {
                let e2 = self.residuals[i] * self.residuals[i];
                let h = self.leverage[i];
                match hc {
                    HcType::Hc0 => e2,
                    HcType::Hc1 => e2 * self.n as f64 / (self.n - self.p) as f64,
                    HcType::Hc2 => e2 / (1.0 - h),
                    HcType::Hc3 => e2 / ((1.0 - h) * (1.0 - h)),
                }
            })
            .collect();
        sandwich(design, &weights, &self.xtx_inv)
    }

    pub fn t_value(&self, k: usize) -> f64 {
        self.coefficients[k] / self.classic_cov[(k, k)].sqrt()
    }
}

fn sandwich(design: &DMatrix<f64>, weights: &[f64], bread: &SymMatrix) -> SymMatrix {
    let p = design.ncols();
    let mut meat = DMatrix::<f64>::zeros(p, p);
    for (i, &w) in weights.iter().enumerate() {
        for a in 0..p {
            let xa = design[(i, a)] * w;
            if xa == 0.0 {
                continue;
            }
            for b in a..p {
                meat[(a, b)] += xa * design[(i, b)];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            meat[(a, b)] = meat[(b, a)];
        }
    }
    SymMatrix::symmetrize(bread.matrix() * meat * bread.matrix())
}

/// Least squares by Householder QR.
pub fn ols_fit(design: &DMatrix<f64>, response: &DVector<f64>) -> Result<OlsFit> {
    let (n, p) = design.shape();
    if response.len() != n {
        return Err(Error::DimMismatch {
            expected: n,
            found: response.len(),
        });
    }
    if n <= p {
        return Err(Error::TooFewRows { rows: n, cols: p });
    }
    let max_col = design.column_iter().map(|c| c.norm_squared()).fold(0.0_f64, f64::max);
    let qr = design.clone().qr();
    let r = qr.r();
    for k in 0..p {
        let rkk = r[(k, k)];
        if !(rkk * rkk > PIVOT_TOL * max_col) {
            return Err(Error::RankDeficient(k));
        }
    }
    let q = qr.q();
    let qty = q.transpose() * response;
    let coefficients = r.solve_upper_triangular(&qty).ok_or(Error::RankDeficient(p))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or(Error::RankDeficient(p))?;
    let xtx_inv = SymMatrix::symmetrize(&r_inv * r_inv.transpose());
    let residuals = response - design * &coefficients;
    let rss = residuals.norm_squared();
    let classic_cov = xtx_inv.scale(rss / (n - p) as f64);
    let leverage = DVector::from_iterator(n, q.row_iter().map(|row| row.norm_squared()));
    let weights: Vec<f64> = residuals.iter().map(|e| e * e).collect();
    let ehw_cov = sandwich(design, &weights, &xtx_inv);
    Ok(OlsFit {
        coefficients,
        residuals,
        classic_cov,
        ehw_cov,
        rss,
        n,
        p,
        xtx_inv,
        leverage,
    })
}

/// F test of `null` against `full`, both fitted to the same response.
pub fn ols_f_test(full: &OlsFit, null: &OlsFit) -> Result<(f64, f64)> {
    if full.n != null.n || null.p > full.p {
        return Err(Error::NotNested);
    }
    if null.rss < full.rss - 1e-10 * full.rss.max(1.0) {
        return Err(Error::NotNested);
    }
    if null.p == full.p {
        return Ok((0.0, 1.0));
    }
    let df1 = full.p - null.p;
    let df2 = full.n - full.p;
    let f = (((null.rss - full.rss) / df1 as f64) / (full.rss / df2 as f64)).max(0.0);
    let p = sf(DistributionId::F { df1, df2 }, f)?;
    Ok((f, p))
}

/// `coefᵀ cov⁻¹ coef`.
pub fn wald_stat(coef: &DVector<f64>, cov: &SymMatrix) -> Result<f64> {
    crate::numerics::mahalanobis(coef, cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design_1z(z: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(z.len(), 2, |i, j| if j == 0 { 1.0 } else { z[i] })
    }

    #[test]
    fn intercept_only_gives_mean() {
        let y = DVector::from_vec(vec![1.0, 4.0, 2.0, 9.0]);
        let fit = ols_fit(&DMatrix::from_element(4, 1, 1.0), &y).unwrap();
        assert_close!(fit.coefficients[0], 4.0, 1e-14);
    }

    #[test]
    fn difference_in_means() {
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let fit = ols_fit(&design_1z(&[1.0, 1.0, 0.0, 0.0]), &y).unwrap();
        assert_close!(fit.coefficients[1], -2.0, 1e-14);
    }

    #[test]
    fn residuals_orthogonal() {
        let x = DMatrix::from_fn(30, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 + j as f64 * 0.1);
        let y = DVector::from_fn(30, |i, _| (i as f64).sin());
        let fit = ols_fit(&x, &y).unwrap();
        let g = x.transpose() * &fit.residuals;
        assert!(g.amax() < 1e-10);
        assert_close!(fit.rss, fit.residuals.norm_squared(), 1e-14);
    }

    #[test]
    fn rank_and_size_errors() {
        let x = DMatrix::from_fn(5, 2, |i, _| i as f64);
        let y = DVector::from_element(5, 1.0);
        assert!(matches!(ols_fit(&x, &y), Err(Error::RankDeficient(1))));
        let x = DMatrix::from_element(2, 2, 1.0);
        assert!(matches!(ols_fit(&x, &DVector::zeros(2)), Err(Error::TooFewRows { .. })));
    }

    #[test]
    fn ehw_equal_magnitude_residuals() {
        // z balanced and residuals ±1 so every squared residual equals 1
        let z = [1.0, 1.0, 0.0, 0.0];
        let y = DVector::from_vec(vec![1.0, -1.0, 3.0, 5.0]);
        let x = design_1z(&z);
        let fit = ols_fit(&x, &y).unwrap();
        assert!(fit.residuals.iter().all(|e| (e.abs() - 1.0).abs() < 1e-12));
        let expected = fit.xtx_inv.scale(1.0);
        assert!((fit.ehw_cov.matrix() - expected.matrix()).amax() < 1e-12);
    }

    #[test]
    fn f_test_identity_and_errors() {
        let y = DVector::from_vec(vec![1.0, 2.0, 0.5, 3.0, 2.2]);
        let x = DMatrix::from_element(5, 1, 1.0);
        let fit = ols_fit(&x, &y).unwrap();
        assert_eq!(ols_f_test(&fit, &fit).unwrap(), (0.0, 1.0));
        let bigger = ols_fit(&design_1z(&[1.0, 0.0, 1.0, 0.0, 1.0]), &y).unwrap();
        assert!(matches!(ols_f_test(&fit, &bigger), Err(Error::NotNested)));
    }

    #[test]
    fn wald_examples() {
        let cov = SymMatrix::from_diagonal(&[1.0, 4.0]);
        assert_eq!(wald_stat(&DVector::zeros(2), &cov).unwrap(), 0.0);
        assert_close!(wald_stat(&DVector::from_vec(vec![1.0, 2.0]), &cov).unwrap(), 2.0, 1e-14);
        assert_close!(
            wald_stat(&DVector::from_vec(vec![1.0, 1.0]), &SymMatrix::identity(2)).unwrap(),
            2.0,
            1e-14
        );
    }
}
