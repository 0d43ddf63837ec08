//! Rerandomization based on balance-test p-values.
//!
//! The crate covers the full pipeline of a rerandomized experiment: balance
//! tests and acceptance rules ([`balance`]), the rejection sampler that draws
//! allocations ([`design`]), treatment-effect estimators with
//! rerandomization-aware inference ([`estimate`]), samplers for the limiting
//! truncated-normal laws ([`asymlaw`]) and a Monte Carlo harness ([`sim`]).

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        assert!((a - b).abs() <= $tol, "{} vs {} (tol {})", a, b, $tol);
    }};
}

pub mod asymlaw;
pub mod balance;
pub mod design;
pub mod error;
pub mod estimate;
pub mod numerics;
pub mod regression;
pub mod sim;

pub use error::{Error, Result};
