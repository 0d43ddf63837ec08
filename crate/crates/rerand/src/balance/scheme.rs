use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{normal_quantile, quantile, DistributionId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    /// Two-sample t tests.
    T,
    /// Linear regression of the treatment indicator on the covariates.
    Lm,
    /// Logistic regression of the treatment indicator on the covariates.
    Logit,
    /// One-way ANOVA F test per covariate.
    F,
    /// Multinomial logistic regression of the arm on the covariates.
    Mlogit,
    /// Mahalanobis-distance rerandomization.
    Rem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Marginal,
    Joint,
    Consensus,
}

impl Rule {
    pub fn uses_marginal(self) -> bool {
        matches!(self, Rule::Marginal | Rule::Consensus)
    }

    pub fn uses_joint(self) -> bool {
        matches!(self, Rule::Joint | Rule::Consensus)
    }
}

/// Reference distribution of the joint test.
///
/// `Default` is the chi-square Wald test for `t`, the F test for `lm` and the
/// likelihood-ratio test for `logit`/`mlogit`. `Wald` switches `lm` and
/// (m)logit to chi-square Wald statistics. `Hotelling` applies to `t` only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointReference {
    #[default]
    Default,
    Wald,
    Hotelling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Studentization {
    #[default]
    Classic,
    Ehw,
}

/// One threshold for every marginal test, or one per test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Alpha {
    Common(f64),
    PerTest(Vec<f64>),
}

impl Alpha {
    pub fn expand(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            Alpha::Common(a) => Ok(vec![*a; n]),
            Alpha::PerTest(v) if v.len() == n => Ok(v.clone()),
            Alpha::PerTest(v) => Err(Error::IncompatibleScheme(format!(
                "alpha_marginal has {} entries, expected {n}",
                v.len()
            ))),
        }
    }
}

/// A ReP acceptance criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceScheme {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub model: Model,
    pub rule: Rule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_marginal: Option<Alpha>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_joint: Option<f64>,
    #[serde(default)]
    pub joint_reference: JointReference,
    #[serde(default)]
    pub studentization: Studentization,
}

impl BalanceScheme {
    pub fn new(model: Model, rule: Rule) -> Self {
        Self {
            id: None,
            model,
            rule,
            alpha_marginal: None,
            alpha_joint: None,
            joint_reference: JointReference::Default,
            studentization: Studentization::Classic,
        }
    }

    pub fn marginal(model: Model, alpha: f64) -> Self {
        Self::new(model, Rule::Marginal).with_marginal(alpha)
    }

    pub fn joint(model: Model, alpha0: f64) -> Self {
        Self::new(model, Rule::Joint).with_joint(alpha0)
    }

    pub fn consensus(model: Model, alpha: f64, alpha0: f64) -> Self {
        Self::new(model, Rule::Consensus)
            .with_marginal(alpha)
            .with_joint(alpha0)
    }

    pub fn rem(alpha0: f64) -> Self {
        Self::joint(Model::Rem, alpha0)
    }

    pub fn with_marginal(mut self, alpha: f64) -> Self {
        self.alpha_marginal = Some(Alpha::Common(alpha));
        self
    }

    pub fn with_marginal_vec(mut self, alpha: Vec<f64>) -> Self {
        self.alpha_marginal = Some(Alpha::PerTest(alpha));
        self
    }

    pub fn with_joint(mut self, alpha0: f64) -> Self {
        self.alpha_joint = Some(alpha0);
        self
    }

    pub fn with_reference(mut self, r: JointReference) -> Self {
        self.joint_reference = r;
        self
    }

    pub fn with_studentization(mut self, s: Studentization) -> Self {
        self.studentization = s;
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    /// `id` if set, otherwise `model_rule`.
    pub fn label(&self) -> String {
        self.id.clone().unwrap_or_else(|| {
            format!(
                "{}_{}",
                serde_json::to_value(self.model).unwrap().as_str().unwrap(),
                serde_json::to_value(self.rule).unwrap().as_str().unwrap()
            )
        })
    }

    /// Number of marginal tests for `j` covariates and `q` arms.
    pub fn marginal_count(&self, j: usize, q: usize) -> usize {
        match self.model {
            Model::Mlogit => j * (q - 1),
            _ => j,
        }
    }

    /// Checks thresholds and model/rule/arm-count compatibility.
    pub fn validate(&self, j: usize, q: usize) -> Result<()> {
        let bad = |m: String| Err(Error::IncompatibleScheme(m));
        if j == 0 {
            return bad("balance schemes need at least one covariate".into());
        }
        match self.model {
            Model::T | Model::Lm | Model::Logit | Model::Rem if q != 2 => {
                return bad(format!("{:?} model needs two arms, found {q}", self.model));
            }
            Model::F if self.rule != Rule::Marginal => {
                return bad("the F model supports the marginal rule only".into());
            }
            Model::Rem if self.rule != Rule::Joint => {
                return bad("rem supports the joint rule only".into());
            }
            _ => {}
        }
        if self.joint_reference == JointReference::Hotelling && self.model != Model::T {
            return bad("the Hotelling reference applies to the t model only".into());
        }
        let in_unit = |a: f64| a > 0.0 && a < 1.0;
        if self.rule.uses_marginal() {
            let alpha = self
                .alpha_marginal
                .as_ref()
                .ok_or_else(|| Error::IncompatibleScheme("alpha_marginal missing".into()))?
                .expand(self.marginal_count(j, q))?;
            if !alpha.iter().all(|&a| in_unit(a)) {
                return bad("marginal thresholds must lie in (0, 1)".into());
            }
        }
        if self.rule.uses_joint() {
            match self.alpha_joint {
                Some(a) if in_unit(a) => {}
                Some(_) => return bad("alpha_joint must lie in (0, 1)".into()),
                None => return bad("alpha_joint missing".into()),
            }
        }
        Ok(())
    }

    pub fn marginal_alphas(&self, j: usize, q: usize) -> Result<Vec<f64>> {
        self.alpha_marginal
            .as_ref()
            .ok_or_else(|| Error::IncompatibleScheme("alpha_marginal missing".into()))?
            .expand(self.marginal_count(j, q))
    }

    /// `a₀`, the `(1 − α₀)` quantile of `χ²_df`.
    pub fn joint_threshold(&self, df: usize) -> Result<f64> {
        let a0 = self
            .alpha_joint
            .ok_or_else(|| Error::IncompatibleScheme("alpha_joint missing".into()))?;
        quantile(DistributionId::ChiSquare { df }, 1.0 - a0)
    }

    /// Limiting marginal box `a_j`: the `(1 − α_j/2)` standard normal quantile.
    pub fn marginal_box(&self, j: usize, q: usize) -> Result<Vec<f64>> {
        Ok(self
            .marginal_alphas(j, q)?
            .iter()
            .map(|a| normal_quantile(1.0 - a / 2.0))
            .collect())
    }
}
