use serde::{Deserialize, Serialize};

use super::special::{beta_inc, gamma_p, gamma_q, ln_gamma, normal_cdf, normal_pdf, normal_quantile};
use crate::error::{Error, Result};

/// Reference distributions used by the balance tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DistributionId {
    StandardNormal,
    StudentT {
        df: usize,
    },
    ChiSquare {
        df: usize,
    },
    F {
        df1: usize,
        df2: usize,
    },
    /// Hotelling's T² with dimension `dim` and `dof` degrees of freedom of the
    /// covariance estimate (`N − 2` in the two-sample test).
    HotellingT2 {
        dim: usize,
        dof: usize,
    },
}

impl DistributionId {
    fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(Error::InvalidDof(s));
        match *self {
            DistributionId::StandardNormal => Ok(()),
            DistributionId::StudentT { df } | DistributionId::ChiSquare { df } if df == 0 => bad(format!("{self:?}")),
            DistributionId::F { df1, df2 } if df1 == 0 || df2 == 0 => bad(format!("{self:?}")),
            DistributionId::HotellingT2 { dim, dof } if dim == 0 || dof < dim => bad(format!("{self:?}")),
            _ => Ok(()),
        }
    }

    fn is_nonnegative(&self) -> bool {
        !matches!(self, DistributionId::StandardNormal | DistributionId::StudentT { .. })
    }

    /// For T²(p, m): `(m − p + 1)/(p m) · T² ~ F(p, m − p + 1)`.
    fn hotelling_to_f(dim: usize, dof: usize) -> (f64, usize, usize) {
        let (p, m) = (dim as f64, dof as f64);
        ((m - p + 1.0) / (p * m), dim, dof - dim + 1)
    }
}

fn t_tail(df: f64, t: f64) -> f64 {
    // P(T > |t|)
    0.5 * beta_inc(df / 2.0, 0.5, df / (df + t * t))
}

fn cdf_unchecked(d: DistributionId, x: f64) -> f64 {
    match d {
        DistributionId::StandardNormal => normal_cdf(x),
        DistributionId::StudentT { df } => {
            let tail = t_tail(df as f64, x);
            if x > 0.0 {
                1.0 - tail
            } else {
                tail
            }
        }
        DistributionId::ChiSquare { df } => gamma_p(df as f64 / 2.0, x.max(0.0) / 2.0),
        DistributionId::F { df1, df2 } => {
            if x <= 0.0 {
                return 0.0;
            }
            let (a, b) = (df1 as f64, df2 as f64);
            beta_inc(a / 2.0, b / 2.0, a * x / (a * x + b))
        }
        DistributionId::HotellingT2 { dim, dof } => {
            let (k, df1, df2) = DistributionId::hotelling_to_f(dim, dof);
            cdf_unchecked(DistributionId::F { df1, df2 }, k * x)
        }
    }
}

fn sf_unchecked(d: DistributionId, x: f64) -> f64 {
    match d {
        DistributionId::StandardNormal => normal_cdf(-x),
        DistributionId::StudentT { .. } => cdf_unchecked(d, -x),
        DistributionId::ChiSquare { df } => gamma_q(df as f64 / 2.0, x.max(0.0) / 2.0),
        DistributionId::F { df1, df2 } => {
            if x <= 0.0 {
                return 1.0;
            }
            let (a, b) = (df1 as f64, df2 as f64);
            beta_inc(b / 2.0, a / 2.0, b / (b + a * x))
        }
        DistributionId::HotellingT2 { dim, dof } => {
            let (k, df1, df2) = DistributionId::hotelling_to_f(dim, dof);
            sf_unchecked(DistributionId::F { df1, df2 }, k * x)
        }
    }
}

fn pdf_unchecked(d: DistributionId, x: f64) -> f64 {
    match d {
        DistributionId::StandardNormal => normal_pdf(x),
        DistributionId::StudentT { df } => {
            let v = df as f64;
            (ln_gamma((v + 1.0) / 2.0)
                - ln_gamma(v / 2.0)
                - 0.5 * (v * std::f64::consts::PI).ln()
                - (v + 1.0) / 2.0 * (1.0 + x * x / v).ln())
            .exp()
        }
        DistributionId::ChiSquare { df } => {
            if x <= 0.0 {
                return 0.0;
            }
            let k = df as f64 / 2.0;
            ((k - 1.0) * x.ln() - x / 2.0 - k * 2f64.ln() - ln_gamma(k)).exp()
        }
        DistributionId::F { df1, df2 } => {
            if x <= 0.0 {
                return 0.0;
            }
            let (a, b) = (df1 as f64, df2 as f64);
            let ln_b = ln_gamma(a / 2.0) + ln_gamma(b / 2.0) - ln_gamma((a + b) / 2.0);
            (0.5 * a * (a / b).ln() + (a / 2.0 - 1.0) * x.ln() - (a + b) / 2.0 * (1.0 + a * x / b).ln() - ln_b).exp()
        }
        DistributionId::HotellingT2 { dim, dof } => {
            let (k, df1, df2) = DistributionId::hotelling_to_f(dim, dof);
            k * pdf_unchecked(DistributionId::F { df1, df2 }, k * x)
        }
    }
}

pub fn cdf(d: DistributionId, x: f64) -> Result<f64> {
    d.validate()?;
    Ok(cdf_unchecked(d, x).clamp(0.0, 1.0))
}

/// Upper tail `P(X > x)`, computed directly rather than as `1 − cdf`.
pub fn sf(d: DistributionId, x: f64) -> Result<f64> {
    d.validate()?;
    Ok(sf_unchecked(d, x).clamp(0.0, 1.0))
}

/// Inverse CDF by bracketed bisection with a Newton polish.
pub fn quantile(d: DistributionId, p: f64) -> Result<f64> {
    d.validate()?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::ProbabilityOutOfRange(p));
    }
    if let DistributionId::StandardNormal = d {
        return Ok(normal_quantile(p));
    }
    let upper = p > 0.5;
    // g increasing in x with root at the quantile
    let g = |x: f64| {
        if upper {
            (1.0 - p) - sf_unchecked(d, x)
        } else {
            cdf_unchecked(d, x) - p
        }
    };
    let (mut lo, mut hi) = if d.is_nonnegative() { (0.0, 1.0) } else { (-1.0, 1.0) };
    while g(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return Ok(f64::INFINITY);
        }
    }
    while g(lo) > 0.0 {
        hi = lo;
        lo *= 2.0;
        if lo < -1e300 {
            return Ok(f64::NEG_INFINITY);
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm == 0.0 {
            return Ok(mid);
        }
        if gm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-7 * (1.0 + mid.abs()) {
            break;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..8 {
        let f = g(x);
        let dens = pdf_unchecked(d, x);
        if !(dens > 0.0) {
            break;
        }
        let next = x - f / dens;
        if !(next >= lo && next <= hi) {
            break;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let step = (next - x).abs();
        x = next;
        if step <= 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_square_quantiles() {
        let q1 = quantile(DistributionId::ChiSquare { df: 1 }, 0.95).unwrap();
        assert_close!(q1, 3.841_458_820_694_124, 1e-9);
        let q2 = quantile(DistributionId::ChiSquare { df: 2 }, 0.95).unwrap();
        assert_close!(q2, -2.0 * 0.05_f64.ln(), 1e-10);
    }

    #[test]
    fn normal_symmetry() {
        assert_eq!(cdf(DistributionId::StandardNormal, 0.0).unwrap(), 0.5);
    }

    #[test]
    fn t_one_df_is_cauchy() {
        let d = DistributionId::StudentT { df: 1 };
        for &x in &[-3.0_f64, -0.5, 0.0, 0.7, 4.0] {
            let exact = 0.5 + x.atan() / std::f64::consts::PI;
            assert_close!(cdf(d, x).unwrap(), exact, 1e-13);
        }
    }

    #[test]
    fn f_with_one_numerator_df_is_squared_t() {
        let f = DistributionId::F { df1: 1, df2: 7 };
        let t = DistributionId::StudentT { df: 7 };
        for &x in &[0.3, 1.2, 2.5] {
            let two_sided = 2.0 * sf(t, x).unwrap();
            assert_close!(sf(f, x * x).unwrap(), two_sided, 1e-13);
        }
    }

    #[test]
    fn hotelling_matches_chi_square_at_large_dof() {
        let h = DistributionId::HotellingT2 { dim: 3, dof: 100_000 };
        let c = DistributionId::ChiSquare { df: 3 };
        for &x in &[1.0, 4.0, 9.0] {
            assert_close!(sf(h, x).unwrap(), sf(c, x).unwrap(), 1e-3);
        }
    }

    #[test]
    fn hotelling_single_dim_is_squared_t() {
        // T²(1, m) is the square of a t with m degrees of freedom
        let h = DistributionId::HotellingT2 { dim: 1, dof: 12 };
        let t = DistributionId::StudentT { df: 12 };
        assert_close!(sf(h, 4.0).unwrap(), 2.0 * sf(t, 2.0).unwrap(), 1e-13);
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(
            cdf(DistributionId::ChiSquare { df: 0 }, 1.0),
            Err(Error::InvalidDof(_))
        ));
        assert!(matches!(
            quantile(DistributionId::StandardNormal, 1.0),
            Err(Error::ProbabilityOutOfRange(_))
        ));
    }

    #[test]
    fn roundtrip_central_region() {
        let families = [
            DistributionId::StandardNormal,
            DistributionId::StudentT { df: 3 },
            DistributionId::StudentT { df: 498 },
            DistributionId::ChiSquare { df: 1 },
            DistributionId::ChiSquare { df: 21 },
            DistributionId::F { df1: 5, df2: 494 },
            DistributionId::F { df1: 3, df2: 2294 },
            DistributionId::HotellingT2 { dim: 5, dof: 498 },
        ];
        for d in families {
            for k in 1..200 {
                let p = 0.005 + 0.99 * k as f64 / 200.0;
                let x = quantile(d, p).unwrap();
                assert_close!(cdf(d, x).unwrap(), p, 1e-10);
                assert_close!(quantile(d, cdf(d, x).unwrap()).unwrap(), x, 1e-6);
            }
        }
    }
}
