//! Sparse Poisson regression for count data.
//!
//! The pipeline expands raw covariates into main effects plus all pairwise
//! interactions, fits L1-penalized Poisson paths, picks the penalty by an
//! inner cross-validation nested inside an outer one, debiases the selected
//! columns with an unpenalized GLM, and scores honest out-of-fold
//! predictions.

pub mod cli;
pub mod dataset;
pub mod design_matrix;
pub mod error;
pub mod lasso;
pub mod metrics;
pub mod nested_cv;
pub mod poisson;
pub mod synth;

pub use dataset::{load_csv, write_csv, Covariate, CovariateKind, Dataset, SchemaConfig};
pub use design_matrix::DesignMatrix;
pub use error::{Error, Result};
pub use poisson::PoissonModel;
