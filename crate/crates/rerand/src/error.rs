use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("non-positive diagonal entry at index {0}")]
    NonPositiveDiagonal(usize),
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("invalid degrees of freedom: {0}")]
    InvalidDof(String),
    #[error("probability {0} outside (0, 1)")]
    ProbabilityOutOfRange(f64),
    #[error("design matrix is rank deficient (column {0})")]
    RankDeficient(usize),
    #[error("too few rows: {rows} rows for {cols} regressors")]
    TooFewRows { rows: usize, cols: usize },
    #[error("null model is not nested in the full model")]
    NotNested,
    #[error("multinomial logit fit diverged (possible separation)")]
    Separation,
    #[error("multinomial logit fit did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("expected {expected} arms, found {found}")]
    WrongArmCount { expected: usize, found: usize },
    #[error("within-group sum of squares is zero for covariate {0}")]
    DegenerateWithinVariance(usize),
    #[error("incompatible scheme: {0}")]
    IncompatibleScheme(String),
    #[error("invalid experiment frame: {0}")]
    InvalidFrame(String),
    #[error("arm {0} is empty")]
    EmptyArm(usize),
    #[error("arm {arm} has {size} units, needs at least {needed}")]
    ArmTooSmall { arm: usize, size: usize, needed: usize },
    #[error(
        "no acceptable allocation in {attempted} draws (best joint p-value {best_joint_pvalue:?}); \
         consider relaxing the thresholds"
    )]
    MaxDrawsExceeded {
        attempted: u64,
        best_joint_pvalue: Option<f64>,
    },
    #[error(
        "constrained law acceptance too low ({accepted} of {proposals} proposals); \
         relax the balance thresholds"
    )]
    AcceptanceTooLow { proposals: u64, accepted: u64 },
    #[error("population table has no potential outcomes")]
    MissingPotentials,
    #[error("invalid population spec: {0}")]
    InvalidSpec(String),
    #[error("scheme {scheme} has only {accepted} accepted records")]
    TooFewAccepted { scheme: String, accepted: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
