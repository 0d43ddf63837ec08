//! Dense linear algebra and distribution primitives.

mod dist;
mod special;

pub use dist::{cdf, quantile, sf, DistributionId};
pub use special::{beta_inc, gamma_p, gamma_q, ln_gamma, normal_cdf, normal_quantile};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::ops::Deref;

use crate::error::{Error, Result};

/// Relative pivot tolerance shared by Cholesky and QR rank checks.
pub const PIVOT_TOL: f64 = 1e-12;

/// A real symmetric matrix.
///
/// Construction checks symmetry to `1e-12` relative to the largest entry and
/// then replaces the matrix by its exact symmetric part.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let n = m.nrows();
        for i in 0..n {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::NotSymmetric);
                }
            }
        }
        Ok(Self::symmetrize(m))
    }

    /// Wraps `(m + mᵀ)/2` without checking; for matrices symmetric up to rounding.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// `a · self · aᵀ`
    pub fn congruence(&self, a: &DMatrix<f64>) -> SymMatrix {
        SymMatrix::symmetrize(a * &self.0 * a.transpose())
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        SymMatrix(&self.0 * c)
    }
}

/// Rows as nested arrays.
pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl Serialize for SymMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        matrix_rows(&self.0).serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(serde::de::Error::custom("matrix must be square"));
        }
        let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        SymMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

impl Deref for SymMatrix {
    type Target = DMatrix<f64>;
    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Lower Cholesky factor `L` with `L Lᵀ = m`.
pub fn cholesky(m: &SymMatrix) -> Result<DMatrix<f64>> {
    let n = m.dim();
    let max_diag = (0..n).map(|i| m[(i, i)]).fold(0.0_f64, f64::max);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > PIVOT_TOL * max_diag) {
            return Err(Error::NotPositiveDefinite { index: j, pivot: d });
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

fn lower_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = DMatrix::<f64>::zeros(n, n);
    for c in 0..n {
        inv[(c, c)] = 1.0 / l[(c, c)];
        for i in (c + 1)..n {
            let mut s = 0.0;
            for k in c..i {
                s -= l[(i, k)] * inv[(k, c)];
            }
            inv[(i, c)] = s / l[(i, i)];
        }
    }
    inv
}

pub fn invert_spd(m: &SymMatrix) -> Result<SymMatrix> {
    let l = cholesky(m)?;
    let li = lower_inverse(&l);
    Ok(SymMatrix::symmetrize(li.transpose() * li))
}

/// Solves `m x = b` for positive definite `m`.
pub fn solve_spd(m: &SymMatrix, b: &DVector<f64>) -> Result<DVector<f64>> {
    if b.len() != m.dim() {
        return Err(Error::DimMismatch {
            expected: m.dim(),
            found: b.len(),
        });
    }
    let l = cholesky(m)?;
    let y = forward_solve(&l, b);
    Ok(backward_solve_transposed(&l, &y))
}

fn forward_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

fn backward_solve_transposed(l: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = DVector::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Returns `(σ(V), D(V))` with `σ(V) = diag(V_kk^{1/2})` and
/// `D(V) = σ(V)⁻¹ V σ(V)⁻¹`.
pub fn sigma_and_corr(v: &SymMatrix) -> Result<(DMatrix<f64>, SymMatrix)> {
    let n = v.dim();
    let mut s = Vec::with_capacity(n);
    for i in 0..n {
        let d = v[(i, i)];
        if !(d > 0.0) {
            return Err(Error::NonPositiveDiagonal(i));
        }
        s.push(d.sqrt());
    }
    let corr = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { v[(i, j)] / (s[i] * s[j]) });
    let sigma = DMatrix::from_diagonal(&DVector::from_vec(s));
    Ok((sigma, SymMatrix::symmetrize(corr)))
}

/// `vᵀ cov⁻¹ v`.
pub fn mahalanobis(v: &DVector<f64>, cov: &SymMatrix) -> Result<f64> {
    if v.len() != cov.dim() {
        return Err(Error::DimMismatch {
            expected: cov.dim(),
            found: v.len(),
        });
    }
    let l = cholesky(cov)?;
    let y = forward_solve(&l, v);
    Ok(y.norm_squared())
}

/// Principal square root of a positive semidefinite matrix. Eigenvalues
/// below zero (rounding) are clamped.
pub fn sym_sqrt(m: &SymMatrix) -> SymMatrix {
    spectral_map(m, |x| x.max(0.0).sqrt())
}

/// Inverse of the principal square root.
pub fn sym_inv_sqrt(m: &SymMatrix) -> Result<SymMatrix> {
    let eig = m.matrix().clone().symmetric_eigen();
    let max = eig.eigenvalues.amax();
    if let Some((i, &v)) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .find(|(_, &v)| !(v > PIVOT_TOL * max))
    {
        return Err(Error::NotPositiveDefinite { index: i, pivot: v });
    }
    Ok(spectral_map(m, |x| 1.0 / x.sqrt()))
}

fn spectral_map(m: &SymMatrix, f: impl Fn(f64) -> f64) -> SymMatrix {
    let eig = m.matrix().clone().symmetric_eigen();
    let d = eig.eigenvalues.map(f);
    let q = &eig.eigenvectors;
    SymMatrix::symmetrize(q * DMatrix::from_diagonal(&d) * q.transpose())
}

/// A matrix `F` with `F Fᵀ = m`: the Cholesky factor when `m` is positive
/// definite, otherwise the principal square root (for singular PSD `m`).
pub fn psd_factor(m: &SymMatrix) -> Result<DMatrix<f64>> {
    match cholesky(m) {
        Ok(l) => Ok(l),
        Err(_) => {
            let eig = m.matrix().clone().symmetric_eigen();
            let max = eig.eigenvalues.amax();
            if let Some((i, &v)) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .find(|(_, &v)| v < -1e-10 * max.max(1.0))
            {
                return Err(Error::NotPositiveDefinite { index: i, pivot: v });
            }
            Ok(sym_sqrt(m).into_inner())
        }
    }
}

/// `P(χ²_{J+2} ≤ a₀) / P(χ²_J ≤ a₀)`, the per-coordinate second moment of a
/// standard normal truncated to the ball of squared radius `a₀`.
pub fn rho(j: usize, a0: f64) -> f64 {
    assert!(j >= 1 && a0 > 0.0, "rho needs j >= 1 and a0 > 0");
    let num = gamma_p((j as f64 + 2.0) / 2.0, a0 / 2.0);
    let den = gamma_p(j as f64 / 2.0, a0 / 2.0);
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(rows: usize, data: &[f64]) -> SymMatrix {
        SymMatrix::new(DMatrix::from_row_slice(rows, rows, data)).unwrap()
    }

    #[test]
    fn cholesky_examples() {
        let l = cholesky(&SymMatrix::identity(3)).unwrap();
        assert_eq!(l, DMatrix::identity(3, 3));
        let l = cholesky(&sym(2, &[4.0, 2.0, 2.0, 5.0])).unwrap();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 2.0]));
        assert!(matches!(
            cholesky(&sym(2, &[1.0, 2.0, 2.0, 1.0])),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(SymMatrix::new(m), Err(Error::NotSymmetric)));
    }

    #[test]
    fn inverse_examples() {
        let inv = invert_spd(&SymMatrix::from_diagonal(&[2.0, 4.0])).unwrap();
        assert_close!(inv[(0, 0)], 0.5, 1e-15);
        assert_close!(inv[(1, 1)], 0.25, 1e-15);
        let inv = invert_spd(&sym(2, &[4.0, 2.0, 2.0, 5.0])).unwrap();
        assert_close!(inv[(0, 0)], 5.0 / 16.0, 1e-14);
        assert_close!(inv[(0, 1)], -1.0 / 8.0, 1e-14);
        assert_close!(inv[(1, 1)], 0.25, 1e-14);
    }

    #[test]
    fn sigma_corr_examples() {
        let (s, d) = sigma_and_corr(&sym(2, &[4.0, 2.0, 2.0, 9.0])).unwrap();
        assert_eq!(s, DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])));
        assert_close!(d[(0, 1)], 1.0 / 3.0, 1e-15);
        assert_eq!(d[(0, 0)], 1.0);
        assert!(matches!(
            sigma_and_corr(&SymMatrix::from_diagonal(&[1.0, 0.0])),
            Err(Error::NonPositiveDiagonal(1))
        ));
    }

    #[test]
    fn mahalanobis_examples() {
        let id = SymMatrix::identity(2);
        assert_eq!(mahalanobis(&DVector::zeros(2), &id).unwrap(), 0.0);
        assert_close!(
            mahalanobis(&DVector::from_vec(vec![1.0, 0.0]), &id).unwrap(),
            1.0,
            1e-15
        );
        let cov = sym(2, &[2.0, 1.0, 1.0, 2.0]);
        assert_close!(
            mahalanobis(&DVector::from_vec(vec![1.0, 1.0]), &cov).unwrap(),
            2.0 / 3.0,
            1e-14
        );
        assert!(matches!(
            mahalanobis(&DVector::zeros(3), &cov),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn sqrt_roundtrip() {
        let m = sym(3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let r = sym_sqrt(&m);
        let back = r.matrix() * r.matrix();
        assert!((back - m.matrix()).amax() < 1e-12);
        let ri = sym_inv_sqrt(&m).unwrap();
        let id = ri.matrix() * r.matrix();
        assert!((id - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn psd_factor_handles_singular() {
        let m = sym(2, &[1.0, 1.0, 1.0, 1.0]);
        let f = psd_factor(&m).unwrap();
        assert!((&f * f.transpose() - m.matrix()).amax() < 1e-12);
    }

    #[test]
    fn rho_examples() {
        assert_close!(rho(2, 5.9915), 0.8423, 1e-4);
        assert!(rho(3, 1e6) > 0.9999);
        // even-df closed form
        let a: f64 = 3.3;
        let closed = (1.0 - (-a / 2.0).exp() * (1.0 + a / 2.0)) / (1.0 - (-a / 2.0).exp());
        assert_close!(rho(2, a), closed, 1e-13);
    }

    #[test]
    fn rho_monotone_on_grid() {
        for j in 1..8 {
            let mut prev = 0.0;
            for k in 1..40 {
                let a0 = 0.25 * k as f64;
                let r = rho(j, a0);
                assert!(r > prev && r < 1.0);
                assert!(rho(j + 1, a0) < r);
                prev = r;
            }
        }
    }
}
