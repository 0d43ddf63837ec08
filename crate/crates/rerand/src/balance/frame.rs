use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{cholesky, SymMatrix};

/// Covariates and arm sizes of an experiment.
///
/// Covariates are stored centered; the original column means are kept.
/// Arms are indexed `0..Q`. With two arms, arm 0 is the treatment (`z = 1`)
/// and arm 1 the control (`z = 0`); the last arm is always the reference
/// level of the multinomial logit.
#[derive(Debug, Clone)]
pub struct ExperimentFrame {
    covariates: DMatrix<f64>,
    column_means: Vec<f64>,
    arm_sizes: Vec<usize>,
    s2x: SymMatrix,
}

impl ExperimentFrame {
    pub fn new(covariates: DMatrix<f64>, arm_sizes: Vec<usize>) -> Result<Self> {
        let (n, j) = covariates.shape();
        if arm_sizes.len() < 2 {
            return Err(Error::InvalidFrame("need at least two arms".into()));
        }
        if arm_sizes.iter().sum::<usize>() != n {
            return Err(Error::InvalidFrame(format!(
                "arm sizes sum to {}, but there are {n} units",
                arm_sizes.iter().sum::<usize>()
            )));
        }
        if let Some((q, &size)) = arm_sizes.iter().enumerate().find(|(_, &s)| s < 2) {
            return Err(Error::ArmTooSmall {
                arm: q,
                size,
                needed: 2,
            });
        }
        let mut x = covariates;
        let mut column_means = Vec::with_capacity(j);
        for (k, mut col) in x.column_iter_mut().enumerate() {
            if !col.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidFrame(format!("covariate {} is not finite", k + 1)));
            }
            let m = col.mean();
            col.add_scalar_mut(-m);
            if col.amax() == 0.0 {
                return Err(Error::InvalidFrame(format!("covariate {} has zero variance", k + 1)));
            }
            column_means.push(m);
        }
        let s2x = SymMatrix::symmetrize(x.transpose() * &x / (n as f64 - 1.0));
        if j > 0 {
            cholesky(&s2x)?;
        }
        Ok(Self {
            covariates: x,
            column_means,
            arm_sizes,
            s2x,
        })
    }

    pub fn n(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn j(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn arms(&self) -> usize {
        self.arm_sizes.len()
    }

    pub fn arm_sizes(&self) -> &[usize] {
        &self.arm_sizes
    }

    /// `e_q = N_q / N`.
    pub fn shares(&self) -> Vec<f64> {
        let n = self.n() as f64;
        self.arm_sizes.iter().map(|&s| s as f64 / n).collect()
    }

    /// Centered covariates.
    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn column_means(&self) -> &[f64] {
        &self.column_means
    }

    /// `S²_x = (N − 1)⁻¹ Σ xᵢxᵢᵀ`.
    pub fn s2x(&self) -> &SymMatrix {
        &self.s2x
    }

    /// `v_x = (e₀e₁)⁻¹ S²_x` for two arms.
    pub fn v_x(&self) -> Result<SymMatrix> {
        self.require_arms(2)?;
        let e = self.shares();
        Ok(self.s2x.scale(1.0 / (e[0] * e[1])))
    }

    pub(crate) fn require_arms(&self, q: usize) -> Result<()> {
        if self.arms() != q {
            return Err(Error::WrongArmCount {
                expected: q,
                found: self.arms(),
            });
        }
        Ok(())
    }

    /// Arm-wise covariate means `x̂(q)` as a `Q × J` matrix.
    pub fn arm_means(&self, assignment: &Assignment) -> DMatrix<f64> {
        let mut sums = DMatrix::<f64>::zeros(self.arms(), self.j());
        for (i, &q) in assignment.arms().iter().enumerate() {
            for k in 0..self.j() {
                sums[(q, k)] += self.covariates[(i, k)];
            }
        }
        for (q, &size) in self.arm_sizes.iter().enumerate() {
            for k in 0..self.j() {
                sums[(q, k)] /= size as f64;
            }
        }
        sums
    }

    /// `τ̂_x = x̂(treatment) − x̂(control)` for two arms.
    pub fn tau_x(&self, assignment: &Assignment) -> DVector<f64> {
        let m = self.arm_means(assignment);
        (m.row(0) - m.row(1)).transpose()
    }
}

/// An allocation of units to arms `0..Q`, matching a frame's arm sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    arms: Vec<usize>,
    levels: usize,
}

impl Assignment {
    /// Validates arm indices against the required arm sizes.
    pub fn from_arms(arms: Vec<usize>, arm_sizes: &[usize]) -> Result<Self> {
        let mut counts = vec![0usize; arm_sizes.len()];
        for &a in &arms {
            if a >= arm_sizes.len() {
                return Err(Error::InvalidInput(format!("arm index {a} out of range")));
            }
            counts[a] += 1;
        }
        if counts != arm_sizes {
            return Err(Error::InvalidInput(format!(
                "assignment has arm counts {counts:?}, expected {arm_sizes:?}"
            )));
        }
        Ok(Self {
            arms,
            levels: arm_sizes.len(),
        })
    }

    pub(crate) fn from_arms_unchecked(arms: Vec<usize>, levels: usize) -> Self {
        Self { arms, levels }
    }

    /// Parses external labels: `1..=Q`, or `0/1` for two arms where `1` is
    /// the treatment.
    pub fn from_labels(labels: &[i64], levels: usize) -> Result<Self> {
        let zero_one = levels == 2 && labels.contains(&0);
        let arms = labels
            .iter()
            .map(|&l| {
                let arm = if zero_one {
                    match l {
                        1 => Some(0),
                        0 => Some(1),
                        _ => None,
                    }
                } else if l >= 1 && (l as usize) <= levels {
                    Some(l as usize - 1)
                } else {
                    None
                };
                arm.ok_or_else(|| Error::InvalidInput(format!("invalid assignment label {l}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { arms, levels })
    }

    pub fn arms(&self) -> &[usize] {
        &self.arms
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    /// 1-based labels.
    pub fn labels(&self) -> Vec<usize> {
        self.arms.iter().map(|a| a + 1).collect()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.levels];
        for &a in &self.arms {
            c[a] += 1;
        }
        c
    }

    /// Treatment indicator `Z` (arm 0) as floats.
    pub fn treated(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.arms.len(),
            self.arms.iter().map(|&a| if a == 0 { 1.0 } else { 0.0 }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centers_and_keeps_means() {
        let x = DMatrix::from_row_slice(4, 1, &[1.0, 2.0, 3.0, 6.0]);
        let f = ExperimentFrame::new(x, vec![2, 2]).unwrap();
        assert_eq!(f.column_means(), &[3.0]);
        assert!(f.covariates().column(0).sum().abs() < 1e-12);
        assert_close!(f.s2x()[(0, 0)], 14.0 / 3.0, 1e-12);
    }

    #[test]
    fn rejects_bad_frames() {
        let x = DMatrix::from_row_slice(4, 1, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            ExperimentFrame::new(x.clone(), vec![2, 2]),
            Err(Error::InvalidFrame(_))
        ));
        let x = DMatrix::from_row_slice(4, 1, &[1.0, 2.0, 1.0, 5.0]);
        assert!(matches!(
            ExperimentFrame::new(x.clone(), vec![1, 3]),
            Err(Error::ArmTooSmall { .. })
        ));
        assert!(ExperimentFrame::new(x, vec![2, 3]).is_err());
    }

    #[test]
    fn label_conventions() {
        let a = Assignment::from_labels(&[1, 0, 0, 1], 2).unwrap();
        assert_eq!(a.arms(), &[0, 1, 1, 0]);
        let b = Assignment::from_labels(&[1, 2, 2, 1], 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.labels(), vec![1, 2, 2, 1]);
        assert!(Assignment::from_labels(&[1, 4], 3).is_err());
        assert!(Assignment::from_arms(vec![0, 0, 1], &[1, 2]).is_err());
    }

    #[test]
    fn tau_x_matches_hand_computation() {
        let x = DMatrix::from_row_slice(4, 1, &[2.0, 0.0, 1.0, 1.0]);
        let f = ExperimentFrame::new(x, vec![2, 2]).unwrap();
        let a = Assignment::from_labels(&[1, 1, 0, 0], 2).unwrap();
        assert_close!(f.tau_x(&a)[0], 0.0, 1e-15);
    }
}
