//! Balance tests and ReP acceptance rules.

mod frame;
mod scheme;
mod stats;

pub use frame::{Assignment, ExperimentFrame};
pub use scheme::{Alpha, BalanceScheme, JointReference, Model, Rule, Studentization};
pub use stats::{
    evaluate, f_balance, lm_balance, logit_balance, mlogit_balance, rem_check, t_joint, t_marginal, BalanceReport,
    LmBalance, LogitBalance,
};

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn frame(xs: &[f64], j: usize, sizes: Vec<usize>) -> ExperimentFrame {
        ExperimentFrame::new(DMatrix::from_row_slice(xs.len() / j, j, xs), sizes).unwrap()
    }

    #[test]
    fn t_marginal_zero_difference() {
        let f = frame(&[1.0, -1.0, 1.0, -1.0], 1, vec![2, 2]);
        let a = Assignment::from_labels(&[1, 1, 0, 0], 2).unwrap();
        let (t, p) = t_marginal(&f, &a, Studentization::Classic).unwrap();
        assert_close!(t[0], 0.0, 1e-15);
        assert_close!(p[0], 1.0, 1e-15);
        let f = frame(&[2.0, 0.0, 1.0, 1.0], 1, vec![2, 2]);
        let (t, _) = t_marginal(&f, &a, Studentization::Classic).unwrap();
        assert_close!(t[0], 0.0, 1e-15);
    }

    #[test]
    fn t_joint_single_covariate_is_squared_t() {
        let f = frame(&[0.3, 1.2, -0.4, 2.0, 0.1, -1.0, 0.7], 1, vec![3, 4]);
        let a = Assignment::from_labels(&[1, 0, 1, 0, 1, 0, 0], 2).unwrap();
        let (t, _) = t_marginal(&f, &a, Studentization::Classic).unwrap();
        let (w, p) = t_joint(&f, &a, JointReference::Default, Studentization::Classic).unwrap();
        assert_close!(w, t[0] * t[0], 1e-12);
        assert!(p > 0.0 && p < 1.0);
        // Hotelling with one dimension reproduces the two-sided t p-value
        let (_, ph) = t_joint(&f, &a, JointReference::Hotelling, Studentization::Classic).unwrap();
        let (_, pt) = t_marginal(&f, &a, Studentization::Classic).unwrap();
        assert_close!(ph, pt[0], 1e-12);
    }

    #[test]
    fn f_is_squared_t_for_two_arms() {
        let f = frame(&[0.3, 1.2, -0.4, 2.0, 0.1, -1.0, 0.7, 0.2], 2, vec![2, 2]);
        let a = Assignment::from_labels(&[1, 2, 2, 1], 2).unwrap();
        let (t, pt) = t_marginal(&f, &a, Studentization::Classic).unwrap();
        let (fs, pf) = f_balance(&f, &a).unwrap();
        for k in 0..2 {
            assert_close!(fs[k], t[k] * t[k], 1e-12);
            assert_close!(pf[k], pt[k], 1e-12);
        }
    }

    #[test]
    fn rem_zero_distance_always_accepted() {
        let f = frame(&[1.0, -1.0, 1.0, -1.0], 1, vec![2, 2]);
        let a = Assignment::from_labels(&[1, 1, 0, 0], 2).unwrap();
        let (d, ok) = rem_check(&f, &a, 1e-6).unwrap();
        assert_close!(d, 0.0, 1e-15);
        assert!(ok);
    }

    #[test]
    fn evaluate_vacuous_and_incompatible() {
        let f = frame(&[0.3, 1.2, -0.4, 2.0, 0.1, -1.0, 0.7, 0.4], 1, vec![4, 4]);
        let a = Assignment::from_labels(&[1, 1, 1, 1, 0, 0, 0, 0], 2).unwrap();
        let s = BalanceScheme::consensus(Model::T, 1e-12, 1e-12);
        let r = evaluate(&f, &a, &s).unwrap();
        assert!(r.accepted);
        assert_eq!(r.marginal_pvalues.len(), 1);
        assert!(r.joint_pvalue.is_some());
        let s = BalanceScheme::joint(Model::F, 0.1);
        assert!(matches!(evaluate(&f, &a, &s), Err(crate::Error::IncompatibleScheme(_))));
    }
}
