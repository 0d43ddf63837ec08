//! Distribution functions checked against statrs.

use rerand::numerics::{beta_inc, cdf, gamma_p, ln_gamma, normal_quantile, quantile, rho, sf, DistributionId};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, Normal, StudentsT};
use statrs::function::{beta, gamma};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1e-300) || (a - b).abs() <= 1e-300
}

#[test]
fn special_functions() {
    for &x in &[0.1, 0.5, 1.0, 2.5, 7.0, 33.3, 171.2] {
        assert!(close(ln_gamma(x), gamma::ln_gamma(x), 1e-12) || (ln_gamma(x) - gamma::ln_gamma(x)).abs() < 1e-13);
    }
    for &a in &[0.5, 1.0, 2.5, 10.0, 60.0] {
        for &x in &[0.01, 0.4, 1.0, 3.0, 12.0, 80.0] {
            let want = gamma::gamma_lr(a, x);
            assert!((gamma_p(a, x) - want).abs() < 1e-12, "P({a},{x})");
        }
    }
    for &(a, b) in &[(0.5, 0.5), (1.0, 3.0), (2.5, 10.0), (40.0, 7.0)] {
        for &x in &[0.001, 0.2, 0.5, 0.8, 0.999] {
            let want = beta::beta_reg(a, b, x);
            assert!((beta_inc(a, b, x) - want).abs() < 1e-12, "I({a},{b},{x})");
        }
    }
}

#[test]
fn normal_and_t() {
    let n = Normal::new(0.0, 1.0).unwrap();
    for &p in &[1e-10, 1e-4, 0.025, 0.3, 0.5, 0.9, 0.999_999] {
        assert!(
            close(normal_quantile(p), n.inverse_cdf(p), 1e-9) || (normal_quantile(p) - n.inverse_cdf(p)).abs() < 1e-12
        );
    }
    for df in [1usize, 3, 10, 200] {
        let t = StudentsT::new(0.0, 1.0, df as f64).unwrap();
        for &x in &[-6.0, -1.5, 0.0, 0.7, 2.0, 9.0] {
            let got = cdf(DistributionId::StudentT { df }, x).unwrap();
            assert!((got - t.cdf(x)).abs() < 1e-10, "t{df} cdf {x}");
        }
        for &p in &[0.01, 0.5, 0.975] {
            let got = quantile(DistributionId::StudentT { df }, p).unwrap();
            assert!(
                (got - t.inverse_cdf(p)).abs() < 1e-7 * got.abs().max(1.0),
                "t{df} q {p}"
            );
        }
    }
}

#[test]
fn chi_square_and_f() {
    for df in [1usize, 2, 5, 30] {
        let c = ChiSquared::new(df as f64).unwrap();
        for &x in &[0.01, 0.5, 3.0, 11.0, 60.0] {
            let d = DistributionId::ChiSquare { df };
            assert!((cdf(d, x).unwrap() - c.cdf(x)).abs() < 1e-12);
            assert!(close(sf(d, x).unwrap(), c.sf(x), 1e-9));
        }
        for &p in &[0.05, 0.45, 0.95] {
            let got = quantile(DistributionId::ChiSquare { df }, p).unwrap();
            assert!(close(got, c.inverse_cdf(p), 1e-8));
        }
    }
    for (df1, df2) in [(1usize, 5usize), (3, 20), (10, 1000)] {
        let f = FisherSnedecor::new(df1 as f64, df2 as f64).unwrap();
        for &x in &[0.05, 0.9, 2.0, 8.0] {
            let got = cdf(DistributionId::F { df1, df2 }, x).unwrap();
            assert!((got - f.cdf(x)).abs() < 1e-11);
        }
    }
}

#[test]
fn hotelling_is_scaled_f() {
    let (dim, dof) = (4usize, 30usize);
    let f = FisherSnedecor::new(dim as f64, (dof - dim + 1) as f64).unwrap();
    let scale = (dim * dof) as f64 / (dof - dim + 1) as f64;
    for &x in &[1.0, 5.0, 12.0, 25.0] {
        let got = cdf(DistributionId::HotellingT2 { dim, dof }, x).unwrap();
        assert!((got - f.cdf(x / scale)).abs() < 1e-11);
    }
}

#[test]
fn rho_is_chi_square_ratio() {
    for j in [1usize, 2, 5, 9] {
        for &a0 in &[0.1, 1.0, 4.0, 20.0] {
            let num = ChiSquared::new((j + 2) as f64).unwrap().cdf(a0);
            let den = ChiSquared::new(j as f64).unwrap().cdf(a0);
            assert!((rho(j, a0) - num / den).abs() < 1e-10, "rho({j},{a0})");
        }
    }
}
