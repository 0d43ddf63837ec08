//! Least squares and multinomial logit fitting.

mod mlogit;
mod ols;

pub(crate) use mlogit::sub_block;
pub use mlogit::{mlogit_fit, mlogit_loglik, mlogit_lrt, mlogit_sandwich, null_loglik_scaled, MleFit};
pub use ols::{ols_f_test, ols_fit, wald_stat, HcType, OlsFit};
