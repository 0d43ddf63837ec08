use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::asymlaw::{gamma_matrix, multi_arm_geometry};
use crate::balance::{Assignment, ExperimentFrame};
use crate::design::RngStream;
use crate::error::{Error, Result};
use crate::estimate::{c_vectors, Contrast, Kind};
use crate::numerics::SymMatrix;
use crate::regression::ols_fit;

/// How potential outcomes depend on covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Link {
    /// Two arms, `x_ij ~ U(−1, 1)`, `Y(treatment) ~ N(Σ_j x_ij³, sd₀²)` and
    /// `Y(control) ~ N(−Σ_j x_ij³, sd₁²)`, each centered so that `τ = 0`.
    CubicSum {
        #[serde(default = "default_cubic_noise")]
        noise_sd: Vec<f64>,
    },
    /// `x_ij ~ N(0, 1)` and `Y(q) = intercept_q + slope_qᵀx + sd_q·noise`.
    Linear {
        intercepts: Vec<f64>,
        slopes: Vec<Vec<f64>>,
        noise_sd: Vec<f64>,
    },
    /// Seven donor-style covariates (married, female, age, average prior gift
    /// in hundreds, and indicators for a largest prior gift below 100, in
    /// [100, 500), and 500 or more; units without a prior gift form the
    /// base category) and binary outcomes `Y(q) = 1{U < π_q(x)}` from a logit
    /// model with a unit-level uniform `U` shared across arms.
    BinaryLogit {
        #[serde(default = "default_arm_effects")]
        arm_effects: Vec<f64>,
    },
}

fn default_cubic_noise() -> Vec<f64> {
    vec![0.4, 0.1]
}

fn default_arm_effects() -> Vec<f64> {
    vec![0.0, 0.12, 0.15, 0.18]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub arm_sizes: Vec<usize>,
    pub j: usize,
    pub link: Link,
    /// Contrast rows; defaults to treatment minus control for two arms and to
    /// the average of arms `2..Q` minus arm 1 otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contrast: Option<Vec<Vec<f64>>>,
}

impl PopulationSpec {
    /// 500 units, 100 treated and 400 controls, five cubic covariates.
    pub fn cubic_two_arm() -> Self {
        Self {
            arm_sizes: vec![100, 400],
            j: 5,
            link: Link::CubicSum {
                noise_sd: default_cubic_noise(),
            },
            contrast: None,
        }
    }

    /// Four arms of sizes (526, 610, 584, 578) with seven covariates and
    /// binary outcomes.
    pub fn binary_multi_arm() -> Self {
        Self {
            arm_sizes: vec![526, 610, 584, 578],
            j: 7,
            link: Link::BinaryLogit {
                arm_effects: default_arm_effects(),
            },
            contrast: None,
        }
    }

    pub fn n(&self) -> usize {
        self.arm_sizes.iter().sum()
    }

    pub fn arms(&self) -> usize {
        self.arm_sizes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        let q = self.arms();
        if q < 2 || self.arm_sizes.iter().any(|&s| s < 2) {
            return bad("need at least two arms of at least two units".into());
        }
        if self.n() <= self.j + 1 {
            return bad("too few units for the number of covariates".into());
        }
        match &self.link {
            Link::CubicSum { noise_sd } => {
                if q != 2 {
                    return bad("cubic_sum needs exactly two arms".into());
                }
                if noise_sd.len() != 2 || noise_sd.iter().any(|s| !(*s >= 0.0)) {
                    return bad("cubic_sum needs two nonnegative noise_sd values".into());
                }
                if self.j == 0 {
                    return bad("cubic_sum needs at least one covariate".into());
                }
            }
            Link::Linear {
                intercepts,
                slopes,
                noise_sd,
            } => {
                if intercepts.len() != q || noise_sd.len() != q || slopes.len() != q {
                    return bad("linear needs one intercept, slope vector and noise_sd per arm".into());
                }
                if slopes.iter().any(|s| s.len() != self.j) {
                    return bad(format!("linear slopes must have {} entries", self.j));
                }
                if noise_sd.iter().any(|s| !(*s >= 0.0)) {
                    return bad("noise_sd must be nonnegative".into());
                }
            }
            Link::BinaryLogit { arm_effects } => {
                if self.j != 7 {
                    return bad("binary_logit uses exactly 7 covariates".into());
                }
                if arm_effects.len() != q {
                    return bad("binary_logit needs one arm effect per arm".into());
                }
            }
        }
        if let Some(rows) = &self.contrast {
            self.contrast_for(rows)?;
        }
        Ok(())
    }

    fn contrast_for(&self, rows: &[Vec<f64>]) -> Result<Contrast> {
        let q = self.arms();
        if rows.iter().any(|r| r.len() != q) {
            return Err(Error::InvalidSpec(format!("contrast rows need {q} entries")));
        }
        let m = DMatrix::from_fn(rows.len(), q, |r, c| rows[r][c]);
        Contrast::new(m).map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    pub fn contrast(&self) -> Result<Contrast> {
        let q = self.arms();
        match &self.contrast {
            Some(rows) => self.contrast_for(rows),
            None if q == 2 => Ok(Contrast::two_arm()),
            None => {
                let mut row = vec![1.0 / (q - 1) as f64; q];
                row[0] = -1.0;
                self.contrast_for(&[row])
            }
        }
    }
}

/// Covariates and every potential outcome of a finite population.
#[derive(Debug, Clone)]
pub struct PotentialOutcomeTable {
    /// Centered covariates, `N × J`.
    pub covariates: DMatrix<f64>,
    /// `Y_i(q)`, `N × Q`.
    pub potentials: DMatrix<f64>,
    pub spec: PopulationSpec,
    pub stream: RngStream,
}

impl PotentialOutcomeTable {
    pub fn frame(&self) -> Result<ExperimentFrame> {
        ExperimentFrame::new(self.covariates.clone(), self.spec.arm_sizes.clone())
    }

    /// `Ȳ(q)`
    pub fn means(&self) -> DVector<f64> {
        self.potentials.row_mean().transpose()
    }

    /// `G Ȳ` for the population's contrast.
    pub fn tau(&self) -> Result<DVector<f64>> {
        Ok(self.spec.contrast()?.matrix() * self.means())
    }

    pub fn observed(&self, a: &Assignment) -> Vec<f64> {
        a.arms()
            .iter()
            .enumerate()
            .map(|(i, &q)| self.potentials[(i, q)])
            .collect()
    }
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

pub fn generate_population(spec: &PopulationSpec, stream: &RngStream) -> Result<PotentialOutcomeTable> {
    spec.validate()?;
    let (n, j, q) = (spec.n(), spec.j, spec.arms());
    let mut rng = stream.rng();
    let mut x = DMatrix::<f64>::zeros(n, j);
    let mut y = DMatrix::<f64>::zeros(n, q);
    match &spec.link {
        Link::CubicSum { noise_sd } => {
            for i in 0..n {
                let mut s = 0.0;
                for k in 0..j {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    x[(i, k)] = v;
                    s += v * v * v;
                }
                let e0: f64 = rng.sample(StandardNormal);
                let e1: f64 = rng.sample(StandardNormal);
                y[(i, 0)] = s + noise_sd[0] * e0;
                y[(i, 1)] = -s + noise_sd[1] * e1;
            }
            for mut col in y.column_iter_mut() {
                let m = col.mean();
                col.add_scalar_mut(-m);
            }
        }
        Link::Linear {
            intercepts,
            slopes,
            noise_sd,
        } => {
            for i in 0..n {
                for k in 0..j {
                    x[(i, k)] = rng.sample(StandardNormal);
                }
                for arm in 0..q {
                    let e: f64 = rng.sample(StandardNormal);
                    let lin: f64 = (0..j).map(|k| slopes[arm][k] * x[(i, k)]).sum();
                    y[(i, arm)] = intercepts[arm] + lin + noise_sd[arm] * e;
                }
            }
        }
        Link::BinaryLogit { arm_effects } => {
            for i in 0..n {
                let married = f64::from(u8::from(rng.random_bool(0.55)));
                let female = f64::from(u8::from(rng.random_bool(0.5)));
                let age_noise: f64 = rng.sample(StandardNormal);
                let age = 45.0 + 12.0 * age_noise;
                let u: f64 = rng.random();
                let (category, avg) = if u < 0.2 {
                    (0, 0.0)
                } else if u < 0.65 {
                    (1, rng.random_range(10.0..100.0))
                } else if u < 0.9 {
                    (2, rng.random_range(80.0..400.0))
                } else {
                    (3, rng.random_range(300.0..1500.0))
                };
                let row = [
                    married,
                    female,
                    age,
                    avg / 100.0,
                    f64::from(u8::from(category == 1)),
                    f64::from(u8::from(category == 2)),
                    f64::from(u8::from(category == 3)),
                ];
                for (k, v) in row.iter().enumerate() {
                    x[(i, k)] = *v;
                }
                let base = -2.6 + 0.3 * married - 0.2 * female
                    + 0.02 * (age - 45.0)
                    + 0.25 * row[3]
                    + 0.8 * row[4]
                    + 2.2 * row[5]
                    + 3.2 * row[6];
                let latent: f64 = rng.random();
                for (arm, effect) in arm_effects.iter().enumerate() {
                    y[(i, arm)] = f64::from(u8::from(latent < logistic(base + effect)));
                }
            }
        }
    }
    for mut col in x.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    Ok(PotentialOutcomeTable {
        covariates: x,
        potentials: y,
        spec: spec.clone(),
        stream: *stream,
    })
}

/// Design-based asymptotic covariances computed from the full table.
#[derive(Debug, Clone)]
pub struct TheoryVariances {
    /// `V_N`, `V_F`, `V_L` (each `Q × Q`).
    pub v: [SymMatrix; 3],
    /// `Γ_N`, `Γ_F` (`Q × QJ`); `Γ_L = 0`.
    pub gamma_n: DMatrix<f64>,
    pub gamma_f: DMatrix<f64>,
    /// Population slopes `γ_q` of `Y(q)` on `x`.
    pub slopes: Vec<DVector<f64>>,
    /// `V_x` (`QJ × QJ`).
    pub v_x: SymMatrix,
    /// Two-arm quantities `c_N`, `c_F`, `v_x` (`J × J`).
    pub two_arm: Option<TwoArmTheory>,
}

#[derive(Debug, Clone)]
pub struct TwoArmTheory {
    pub c_n: DVector<f64>,
    pub c_f: DVector<f64>,
    pub v_x: SymMatrix,
    /// `v_N`, `v_F`, `v_L` for `τ = Ȳ(treatment) − Ȳ(control)`.
    pub v: [f64; 3],
}

impl TheoryVariances {
    pub fn of(&self, kind: Kind) -> &SymMatrix {
        match kind {
            Kind::N => &self.v[0],
            Kind::F => &self.v[1],
            Kind::L => &self.v[2],
        }
    }
}

/// `V_* = diag(S_{*,qq}/e_q) − S_*` with `S_*` the covariance of the
/// adjusted potential outcomes `Y(q) − xᵀγ_q` (L), `Y(q) − xᵀγ_F` (F), or
/// `Y(q)` (N).
pub fn theory_variances(pop: &PotentialOutcomeTable) -> Result<TheoryVariances> {
    let (n, q) = pop.potentials.shape();
    if n == 0 || q != pop.spec.arms() {
        return Err(Error::MissingPotentials);
    }
    if pop.potentials.iter().any(|v| !v.is_finite()) {
        return Err(Error::MissingPotentials);
    }
    let frame = pop.frame()?;
    let x = frame.covariates();
    let j = frame.j();
    let e = frame.shares();
    let design = DMatrix::from_fn(n, j + 1, |i, c| if c == 0 { 1.0 } else { x[(i, c - 1)] });
    let slopes = (0..q)
        .map(|arm| {
            let fit = ols_fit(&design, &pop.potentials.column(arm).into_owned())?;
            Ok(fit.coefficients.rows(1, j).into_owned())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut gamma_f = DVector::<f64>::zeros(j);
    for (g, w) in slopes.iter().zip(&e) {
        gamma_f += g * *w;
    }
    let cov_v = |adjusted: DMatrix<f64>| {
        let mut c = adjusted.clone();
        for mut col in c.column_iter_mut() {
            let m = col.mean();
            col.add_scalar_mut(-m);
        }
        let s = c.transpose() * &c / (n as f64 - 1.0);
        let d = DMatrix::from_fn(q, q, |a, b| if a == b { s[(a, a)] / e[a] } else { 0.0 });
        SymMatrix::symmetrize(d - s)
    };
    let adjust = |g: &dyn Fn(usize) -> DVector<f64>| {
        DMatrix::from_fn(n, q, |i, arm| pop.potentials[(i, arm)] - (x.row(i) * g(arm))[0])
    };
    let v_n = cov_v(pop.potentials.clone());
    let v_f = cov_v(adjust(&|_| gamma_f.clone()));
    let v_l = cov_v(adjust(&|arm| slopes[arm].clone()));
    let gamma_n = gamma_matrix(Kind::N, &slopes, &e)?;
    let gamma_fm = gamma_matrix(Kind::F, &slopes, &e)?;
    let v_x = multi_arm_geometry(&frame)?.v_x;
    let two_arm = if q == 2 {
        let (c_n, c_f) = c_vectors(frame.s2x(), &e, &slopes);
        let g = Contrast::two_arm();
        let scalar = |v: &SymMatrix| v.congruence(g.matrix())[(0, 0)];
        Some(TwoArmTheory {
            c_n,
            c_f,
            v_x: frame.v_x()?,
            v: [scalar(&v_n), scalar(&v_f), scalar(&v_l)],
        })
    } else {
        None
    };
    Ok(TheoryVariances {
        v: [v_n, v_f, v_l],
        gamma_n,
        gamma_f: gamma_fm,
        slopes,
        v_x,
        two_arm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::solve_spd;

    #[test]
    fn cubic_population_has_zero_effect() {
        let pop = generate_population(&PopulationSpec::cubic_two_arm(), &RngStream::new(1, 0)).unwrap();
        assert_eq!(pop.potentials.shape(), (500, 2));
        assert!(pop.tau().unwrap()[0].abs() < 1e-12);
        assert!(pop.covariates.row_mean().amax() < 1e-12);
    }

    #[test]
    fn lemma_identities() {
        let pop = generate_population(&PopulationSpec::cubic_two_arm(), &RngStream::new(2, 0)).unwrap();
        let th = theory_variances(&pop).unwrap();
        for (k, g) in [(0, &th.gamma_n), (1, &th.gamma_f)] {
            let rhs = th.v[2].matrix() + th.v_x.congruence(g).matrix();
            assert!((th.v[k].matrix() - rhs).amax() < 1e-8 * th.v[k].amax());
        }
        let t = th.two_arm.unwrap();
        for (k, c) in [(0, &t.c_n), (1, &t.c_f)] {
            let quad = c.dot(&solve_spd(&t.v_x, c).unwrap());
            assert_close!(t.v[k] - t.v[2], quad, 1e-8 * t.v[k]);
        }
    }

    #[test]
    fn constant_effects_zero_c_f() {
        let spec = PopulationSpec {
            arm_sizes: vec![30, 50],
            j: 2,
            link: Link::Linear {
                intercepts: vec![1.0, 0.0],
                slopes: vec![vec![0.5, -1.0], vec![0.5, -1.0]],
                noise_sd: vec![0.0, 0.0],
            },
            contrast: None,
        };
        let pop = generate_population(&spec, &RngStream::new(3, 0)).unwrap();
        let t = theory_variances(&pop).unwrap().two_arm.unwrap();
        assert!(t.c_f.amax() < 1e-10);
        assert!(t.v[2].abs() < 1e-12);
    }

    #[test]
    fn multi_arm_spec() {
        let spec = PopulationSpec::binary_multi_arm();
        let pop = generate_population(&spec, &RngStream::new(4, 0)).unwrap();
        assert_eq!(pop.potentials.shape(), (2298, 4));
        assert!(pop.potentials.iter().all(|v| *v == 0.0 || *v == 1.0));
        let g = spec.contrast().unwrap();
        assert_eq!(
            g.matrix().row(0).iter().copied().collect::<Vec<_>>(),
            vec![-1.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]
        );
        pop.frame().unwrap();
    }

    #[test]
    fn invalid_specs() {
        let mut s = PopulationSpec::cubic_two_arm();
        s.arm_sizes = vec![100, 200, 200];
        assert!(matches!(s.validate(), Err(Error::InvalidSpec(_))));
        let mut s = PopulationSpec::binary_multi_arm();
        s.j = 5;
        assert!(s.validate().is_err());
    }
}
