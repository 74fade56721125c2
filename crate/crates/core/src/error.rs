use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("ragged columns: column `{column}` has length {len}, expected {expected}")]
    RaggedColumns {
        column: String,
        len: usize,
        expected: usize,
    },
    #[error("non-finite value in column `{column}` at row {row}")]
    NonFiniteValue { column: String, row: usize },
    #[error("treatment column `{column}` has non-binary value {value} at row {row}")]
    NonBinaryTreatment {
        column: String,
        row: usize,
        value: f64,
    },
    #[error("covariance matrix is not symmetric (max asymmetry {max_asymmetry:e})")]
    AsymmetricCovariance { max_asymmetry: f64 },
    #[error("covariance matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("design matrix is rank deficient: {0}")]
    RankDeficientDesign(String),
    #[error("regressor `{0}` has zero second moment")]
    DegenerateRegressor(String),
    #[error("logistic fit did not converge: data appear separated ({0})")]
    Separation(String),
    #[error("treatment arm {arm} is empty")]
    EmptyArm { arm: u8 },
    #[error("propensity model is degenerate: {0}")]
    PropensityDegenerate(String),
    #[error("calibration matrix is singular: {0}")]
    SingularCalibration(String),
    #[error("influence gram matrix is singular: {0}")]
    SingularGram(String),
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("joint covariance of internal estimates is singular: {0}")]
    SingularJointCovariance(String),
    #[error("standard error of component {0} is zero")]
    ZeroStandardError(usize),
    #[error("matrix is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("coordinate descent did not converge after {sweeps} sweeps (last change {last_change:e})")]
    NoConvergence { sweeps: usize, last_change: f64 },
    #[error("cross-validation fold {fold} cannot support the functional fits: {detail}")]
    FoldTooSmall { fold: usize, detail: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("too many failed replications for {method}: {failed} of {reps}")]
    ReplicationFailures {
        method: String,
        failed: usize,
        reps: usize,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse classification used by the command-line front end for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input: malformed files, contract violations, invalid options.
    Validation,
    /// Well-formed input on which the numerics broke down.
    Numerical,
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::RaggedColumns { .. } => "RaggedColumns",
            Error::NonFiniteValue { .. } => "NonFiniteValue",
            Error::NonBinaryTreatment { .. } => "NonBinaryTreatment",
            Error::AsymmetricCovariance { .. } => "AsymmetricCovariance",
            Error::NotPsd { .. } => "NotPSD",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::MissingColumn(_) => "MissingColumn",
            Error::RankDeficientDesign(_) => "RankDeficientDesign",
            Error::DegenerateRegressor(_) => "DegenerateRegressor",
            Error::Separation(_) => "Separation",
            Error::EmptyArm { .. } => "EmptyArm",
            Error::PropensityDegenerate(_) => "PropensityDegenerate",
            Error::SingularCalibration(_) => "SingularCalibration",
            Error::SingularGram(_) => "SingularGram",
            Error::NonPositiveVariance(_) => "NonPositiveVariance",
            Error::SingularJointCovariance(_) => "SingularJointCovariance",
            Error::ZeroStandardError(_) => "ZeroStandardError",
            Error::NotPositiveDefinite(_) => "NotPositiveDefinite",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::FoldTooSmall { .. } => "FoldTooSmall",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::ReplicationFailures { .. } => "ReplicationFailures",
            Error::Parse(_) => "Parse",
            Error::Io(_) => "Io",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::RaggedColumns { .. }
            | Error::NonFiniteValue { .. }
            | Error::NonBinaryTreatment { .. }
            | Error::AsymmetricCovariance { .. }
            | Error::NotPsd { .. }
            | Error::DimensionMismatch(_)
            | Error::MissingColumn(_)
            | Error::NonPositiveVariance(_)
            | Error::InvalidConfig(_)
            | Error::Parse(_)
            | Error::Io(_) => ErrorClass::Validation,
            _ => ErrorClass::Numerical,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
