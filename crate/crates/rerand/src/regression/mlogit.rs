use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{invert_spd, solve_spd, SymMatrix};

const MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 30;
const GRAD_TOL: f64 = 1e-10;
const DIVERGENCE: f64 = 1e4;

/// Maximum-likelihood fit of a multinomial logit with the last level as the
/// reference.
///
/// `theta` is ordered by level, then coefficient (intercept first), so level
/// `q` occupies `theta[q(J+1)..(q+1)(J+1)]`.
#[derive(Debug, Clone)]
pub struct MleFit {
    pub theta: DVector<f64>,
    /// `(−N·H(θ̃))⁻¹` over all of `theta`.
    pub cov: SymMatrix,
    /// Scaled log-likelihood `N⁻¹ Σ log π_{Z_i}`.
    pub loglik_scaled: f64,
    pub converged: bool,
    pub iterations: usize,
    pub levels: usize,
    pub n_covariates: usize,
    pub n: usize,
}

impl MleFit {
    fn slope_indices(&self) -> Vec<usize> {
        let p = self.n_covariates + 1;
        (0..self.levels - 1)
            .flat_map(|q| (1..p).map(move |k| q * p + k))
            .collect()
    }

    /// Slope coefficients `β̃`, ordered by (level, covariate).
    pub fn slopes(&self) -> DVector<f64> {
        let idx = self.slope_indices();
        DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.theta[i]))
    }

    /// The covariance block `Ṽ` of the slopes.
    pub fn slope_cov(&self) -> SymMatrix {
        sub_block(&self.cov, &self.slope_indices())
    }
}

pub(crate) fn sub_block(m: &SymMatrix, idx: &[usize]) -> SymMatrix {
    SymMatrix::symmetrize(DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])]))
}

struct Eval {
    loglik: f64,
    grad: Vec<f64>,
    /// `−H`, row-major `dim × dim`
    neg_hess: Vec<f64>,
}

struct Problem<'a> {
    labels: &'a [usize],
    x: &'a DMatrix<f64>,
    levels: usize,
}

impl Problem<'_> {
    fn p(&self) -> usize {
        self.x.ncols() + 1
    }

    fn dim(&self) -> usize {
        (self.levels - 1) * self.p()
    }

    /// Linear predictors and log-normalizer for unit `i`; fills `probs`.
    fn unit(&self, theta: &[f64], i: usize, xt: &mut [f64], probs: &mut [f64]) -> f64 {
        let p = self.p();
        xt[0] = 1.0;
        for k in 1..p {
            xt[k] = self.x[(i, k - 1)];
        }
        let mut max = 0.0_f64;
        for (q, pr) in probs.iter_mut().enumerate() {
            let eta: f64 = theta[q * p..(q + 1) * p]
                .iter()
                .zip(xt.iter())
                .map(|(a, b)| a * b)
                .sum();
            *pr = eta;
            max = max.max(eta);
        }
        let mut den = (-max).exp();
        for pr in probs.iter() {
            den += (pr - max).exp();
        }
        let log_norm = max + den.ln();
        let label = self.labels[i];
        let ll = if label + 1 == self.levels {
            -log_norm
        } else {
            probs[label] - log_norm
        };
        for pr in probs.iter_mut() {
            *pr = (*pr - log_norm).exp();
        }
        ll
    }

    fn loglik(&self, theta: &[f64]) -> f64 {
        let mut xt = vec![0.0; self.p()];
        let mut probs = vec![0.0; self.levels - 1];
        let n = self.labels.len();
        (0..n).map(|i| self.unit(theta, i, &mut xt, &mut probs)).sum::<f64>() / n as f64
    }

    fn evaluate(&self, theta: &[f64]) -> Eval {
        let p = self.p();
        let m = self.levels - 1;
        let dim = self.dim();
        let n = self.labels.len();
        let mut design = DMatrix::<f64>::from_element(n, p, 1.0);
        design.columns_mut(1, p - 1).copy_from(self.x);
        let mut xt = vec![0.0; p];
        let mut probs = vec![0.0; m];
        let mut loglik = 0.0;
        let mut pm = DMatrix::<f64>::zeros(n, m);
        let mut resid = DMatrix::<f64>::zeros(n, m);
        for i in 0..n {
            loglik += self.unit(theta, i, &mut xt, &mut probs);
            for q in 0..m {
                pm[(i, q)] = probs[q];
                resid[(i, q)] = f64::from(u8::from(self.labels[i] == q)) - probs[q];
            }
        }
        let inv_n = 1.0 / n as f64;
        let grad: Vec<f64> = (design.transpose() * &resid * inv_n).iter().copied().collect();
        // −H = blockdiag(Σ p_q x xᵀ) − Σ (p ⊗ x)(p ⊗ x)ᵀ
        let mut kron = DMatrix::<f64>::zeros(n, dim);
        for q in 0..m {
            for k in 0..p {
                kron.column_mut(q * p + k)
                    .zip_zip_apply(&design.column(k), &pm.column(q), |o, d, w| *o = d * w);
            }
        }
        let outer = kron.transpose() * &kron;
        let mut h = vec![0.0; dim * dim];
        for a in 0..dim {
            for b in 0..dim {
                h[a * dim + b] = -outer[(a, b)] * inv_n;
            }
        }
        for q in 0..m {
            let block = kron.columns(q * p, p).transpose() * &design;
            for k in 0..p {
                for l in 0..p {
                    h[(q * p + k) * dim + q * p + l] += block[(k, l)] * inv_n;
                }
            }
        }
        Eval {
            loglik: loglik * inv_n,
            grad,
            neg_hess: h,
        }
    }
}

fn validate(labels: &[usize], levels: usize, x: &DMatrix<f64>) -> Result<Vec<usize>> {
    if labels.len() != x.nrows() {
        return Err(Error::DimMismatch {
            expected: x.nrows(),
            found: labels.len(),
        });
    }
    if levels < 2 {
        return Err(Error::WrongArmCount {
            expected: 2,
            found: levels,
        });
    }
    let mut counts = vec![0usize; levels];
    for &l in labels {
        if l >= levels {
            return Err(Error::InvalidInput(format!("label {l} outside 0..{levels}")));
        }
        counts[l] += 1;
    }
    for (q, &c) in counts.iter().enumerate() {
        if c < 2 {
            return Err(Error::ArmTooSmall {
                arm: q,
                size: c,
                needed: 2,
            });
        }
    }
    Ok(counts)
}

/// Intercept-only optimum: intercepts `log(e_q/e_Q)`, slopes zero.
fn null_theta(counts: &[usize], p: usize) -> Vec<f64> {
    let levels = counts.len();
    let reference = counts[levels - 1] as f64;
    let mut theta = vec![0.0; (levels - 1) * p];
    for q in 0..levels - 1 {
        theta[q * p] = (counts[q] as f64 / reference).ln();
    }
    theta
}

/// Scaled log-likelihood of the intercept-only model, `Σ e_q log e_q`.
pub fn null_loglik_scaled(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    counts
        .iter()
        .map(|&c| {
            let e = c as f64 / n as f64;
            e * e.ln()
        })
        .sum()
}

/// Newton–Raphson with step halving, started at the intercept-only optimum.
///
/// `labels` are 0-based levels in `0..levels`; the last level is the
/// reference. Covariates should be centered.
pub fn mlogit_fit(labels: &[usize], levels: usize, covariates: &DMatrix<f64>) -> Result<MleFit> {
    let counts = validate(labels, levels, covariates)?;
    let problem = Problem {
        labels,
        x: covariates,
        levels,
    };
    let dim = problem.dim();
    let mut theta = null_theta(&counts, problem.p());
    let mut eval = problem.evaluate(&theta);
    let null_info: Vec<f64> = (0..dim).map(|a| eval.neg_hess[a * dim + a]).collect();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITER {
        let sup = eval.grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        if sup < GRAD_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let a = SymMatrix::symmetrize(DMatrix::from_row_slice(dim, dim, &eval.neg_hess));
        let step = match solve_spd(&a, &DVector::from_column_slice(&eval.grad)) {
            Ok(s) => s,
            Err(Error::NotPositiveDefinite { .. }) => return Err(Error::Separation),
            Err(e) => return Err(e),
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let ll = problem.loglik(&cand);
            if ll >= eval.loglik - 1e-14 * (1.0 + eval.loglik.abs()) {
                accepted = Some(cand);
                break;
            }
            t *= 0.5;
        }
        let Some(cand) = accepted else {
            return Err(Error::NoConvergence(iterations));
        };
        theta = cand;
        if theta.iter().map(|v| v * v).sum::<f64>().sqrt() > DIVERGENCE {
            return Err(Error::Separation);
        }
        eval = problem.evaluate(&theta);
    }
    if !converged {
        return Err(Error::NoConvergence(iterations));
    }
    // a separated fit converges numerically with vanishing information
    if (0..dim).any(|a| eval.neg_hess[a * dim + a] < 1e-8 * null_info[a]) {
        return Err(Error::Separation);
    }
    let n = labels.len();
    let info = SymMatrix::symmetrize(DMatrix::from_row_slice(dim, dim, &eval.neg_hess));
    let cov = invert_spd(&info.scale(n as f64)).map_err(|_| Error::RankDeficient(0))?;
    Ok(MleFit {
        theta: DVector::from_vec(theta),
        cov,
        loglik_scaled: eval.loglik,
        converged,
        iterations,
        levels,
        n_covariates: covariates.ncols(),
        n,
    })
}

/// `λ = 2N{L̄(θ̃) − L̄(θ*)}`, clamped at zero.
pub fn mlogit_lrt(fit: &MleFit, labels: &[usize], covariates: &DMatrix<f64>) -> Result<f64> {
    let counts = validate(labels, fit.levels, covariates)?;
    let lambda = 2.0 * fit.n as f64 * (fit.loglik_scaled - null_loglik_scaled(&counts));
    Ok(lambda.max(0.0))
}

/// Sandwich covariance `A⁻¹ B A⁻¹ / N` of the full parameter vector, with
/// `A = −H` and `B` the average outer product of per-unit scores.
pub fn mlogit_sandwich(fit: &MleFit, labels: &[usize], covariates: &DMatrix<f64>) -> Result<SymMatrix> {
    let problem = Problem {
        labels,
        x: covariates,
        levels: fit.levels,
    };
    let p = problem.p();
    let m = fit.levels - 1;
    let dim = problem.dim();
    let n = labels.len();
    let theta = fit.theta.as_slice();
    let mut xt = vec![0.0; p];
    let mut probs = vec![0.0; m];
    let mut score = vec![0.0; dim];
    let mut meat = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..n {
        problem.unit(theta, i, &mut xt, &mut probs);
        for q in 0..m {
            let resid = f64::from(u8::from(labels[i] == q)) - probs[q];
            for k in 0..p {
                score[q * p + k] = xt[k] * resid;
            }
        }
        for a in 0..dim {
            for b in a..dim {
                meat[(a, b)] += score[a] * score[b];
            }
        }
    }
    for a in 0..dim {
        for b in 0..a {
            meat[(a, b)] = meat[(b, a)];
        }
    }
    // with cov = (N A)⁻¹ the sandwich A⁻¹BA⁻¹/N is cov · Σ sᵢsᵢᵀ · cov
    let bread = fit.cov.matrix();
    Ok(SymMatrix::symmetrize(bread * meat * bread))
}

/// Scaled log-likelihood at an arbitrary parameter vector.
pub fn mlogit_loglik(theta: &DVector<f64>, labels: &[usize], levels: usize, covariates: &DMatrix<f64>) -> f64 {
    Problem {
        labels,
        x: covariates,
        levels,
    }
    .loglik(theta.as_slice())
}
