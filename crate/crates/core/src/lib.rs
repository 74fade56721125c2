//! Semiparametric fusion of an internal individual-level dataset with
//! summary statistics reported by external studies.
//!
//! The internal estimate of a target functional is corrected along the
//! discrepancy between internally and externally estimated auxiliary
//! functionals. [`debias`] screens out external coordinates that disagree with
//! the internal data before fusing, and [`sim`] reproduces the simulation
//! scenarios used to evaluate the estimators.

pub mod debias;
pub mod error;
pub mod functionals;
pub mod fusion;
pub mod linalg;
pub mod model;
pub mod normal;
pub mod sim;

pub use error::{Error, ErrorClass, Result};
pub use nalgebra;
pub use functionals::FunctionalDescriptor;
pub use fusion::{FusionInputs, FusionProblem, Inference, Side};
pub use model::{
    validate_dataset, validate_summary, FunctionalFit, FusionResult, InternalDataset, Method, Roles,
    SelectionResult, SummaryStatistic,
};
