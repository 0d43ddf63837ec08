//! Randomized invariants of the estimators and balance statistics.

use nalgebra::DMatrix;
use proptest::prelude::*;
use rerand::balance::{
    evaluate, t_joint, Assignment, BalanceScheme, ExperimentFrame, JointReference, Model, Studentization,
};
use rerand::estimate::{estimate_two_arm_all, Kind};

/// Covariates, outcomes and a treatment pattern with both arms of size ≥ j + 3.
fn data() -> impl Strategy<Value = (DMatrix<f64>, Vec<f64>, Vec<usize>)> {
    (1usize..4, 14usize..40).prop_flat_map(|(j, n)| {
        let n1 = (j + 3)..=(n - j - 3);
        (
            prop::collection::vec(-5.0f64..5.0, n * j),
            prop::collection::vec(-10.0f64..10.0, n),
            n1,
            any::<u64>(),
        )
            .prop_map(move |(xs, y, n1, shuffle)| {
                let x = DMatrix::from_vec(n, j, xs);
                let mut arms: Vec<usize> = (0..n).map(|i| usize::from(i >= n1)).collect();
                // deterministic Fisher-Yates from the drawn seed
                let mut s = shuffle | 1;
                for i in (1..n).rev() {
                    s ^= s << 13;
                    s ^= s >> 7;
                    s ^= s << 17;
                    arms.swap(i, (s % (i as u64 + 1)) as usize);
                }
                (x, y, arms)
            })
    })
}

fn setup(x: &DMatrix<f64>, arms: &[usize]) -> Option<(ExperimentFrame, Assignment)> {
    let sizes = vec![
        arms.iter().filter(|&&a| a == 0).count(),
        arms.iter().filter(|&&a| a == 1).count(),
    ];
    let frame = ExperimentFrame::new(x.clone(), sizes.clone()).ok()?;
    // near-collinear draws are rejected rather than tested
    frame.v_x().ok()?;
    let a = Assignment::from_arms(arms.to_vec(), &sizes).ok()?;
    Some((frame, a))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjusted_estimators_decompose((x, y, arms) in data()) {
        let Some((frame, a)) = setup(&x, &arms) else { return Ok(()) };
        let Ok(est) = estimate_two_arm_all(&frame, &a, &y, 0.95) else { return Ok(()) };
        for e in &est[1..] {
            let adj: f64 = e.tau_x.iter().zip(&e.gamma).map(|(t, g)| t * g).sum();
            prop_assert!((e.point[0] - (est[0].point[0] - adj)).abs() < 1e-8 * (1.0 + est[0].point[0].abs()));
        }
    }

    #[test]
    fn lin_is_affine_invariant(
        (x, y, arms) in data(),
        shift in -3.0f64..3.0,
        scale in 0.2f64..5.0,
        beta in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let Some((frame, a)) = setup(&x, &arms) else { return Ok(()) };
        let Ok(base) = estimate_two_arm_all(&frame, &a, &y, 0.95) else { return Ok(()) };
        let j = x.ncols();
        // linear function of the covariates added to every outcome
        let y2: Vec<f64> = (0..y.len())
            .map(|i| shift + scale * y[i] + (0..j).map(|k| beta[k] * x[(i, k)]).sum::<f64>())
            .collect();
        // invertible covariate transform
        let mut x2 = x.clone();
        for k in 0..j {
            let mut c = x2.column_mut(k);
            c *= 1.0 + k as f64;
            c.add_scalar_mut(shift * k as f64);
        }
        if j > 1 {
            let c0 = x2.column(0).into_owned();
            x2.column_mut(1).axpy(0.5, &c0, 1.0);
        }
        let Some((frame2, a2)) = setup(&x2, &arms) else { return Ok(()) };
        let moved = estimate_two_arm_all(&frame2, &a2, &y2, 0.95).unwrap();
        let l0 = base[2].point[0] * scale;
        let tol = 1e-7 * (1.0 + l0.abs() + y.iter().map(|v| v.abs()).sum::<f64>());
        prop_assert!((moved[2].point[0] - l0).abs() < tol);
        prop_assert!((moved[2].se(0) - scale * base[2].se(0)).abs() < tol);
    }

    #[test]
    fn swapping_arms_flips_sign((x, y, arms) in data()) {
        let Some((frame, a)) = setup(&x, &arms) else { return Ok(()) };
        let flipped: Vec<usize> = arms.iter().map(|&v| 1 - v).collect();
        let Some((frame_f, a_f)) = setup(&x, &flipped) else { return Ok(()) };
        let Ok(e) = estimate_two_arm_all(&frame, &a, &y, 0.95) else { return Ok(()) };
        let e_f = estimate_two_arm_all(&frame_f, &a_f, &y, 0.95).unwrap();
        for k in Kind::ALL.iter().map(|&k| k as usize) {
            prop_assert!((e[k].point[0] + e_f[k].point[0]).abs() < 1e-8 * (1.0 + e[k].point[0].abs()));
            prop_assert!((e[k].se(0) - e_f[k].se(0)).abs() < 1e-8 * (1.0 + e[k].se(0)));
        }
        for stud in [Studentization::Classic, Studentization::Ehw] {
            let (w, _) = t_joint(&frame, &a, JointReference::Default, stud).unwrap();
            let (w_f, _) = t_joint(&frame_f, &a_f, JointReference::Default, stud).unwrap();
            prop_assert!((w - w_f).abs() < 1e-8 * (1.0 + w));
        }
    }

    #[test]
    fn balance_decisions_ignore_covariate_scale((x, _y, arms) in data(), c in 0.01f64..100.0) {
        let Some((frame, a)) = setup(&x, &arms) else { return Ok(()) };
        let Some((frame_c, a_c)) = setup(&(&x * c), &arms) else { return Ok(()) };
        for model in [Model::T, Model::Lm, Model::Rem] {
            let s = if model == Model::Rem { BalanceScheme::rem(0.5) } else { BalanceScheme::consensus(model, 0.2, 0.5) };
            let r = evaluate(&frame, &a, &s).unwrap();
            let r_c = evaluate(&frame_c, &a_c, &s).unwrap();
            if let (Some(p), Some(p_c)) = (r.joint_pvalue, r_c.joint_pvalue) {
                prop_assert!((p - p_c).abs() < 1e-8);
            }
        }
    }
}
