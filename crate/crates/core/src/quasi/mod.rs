//! Estimators for assignment that is not ignorable given observed covariates.

pub mod did;
pub mod iv;
pub mod rdd;
pub mod synth;

pub use did::{ate_did, ate_did_covariates, ate_did_multiperiod, DidDataset};
pub use iv::{ate_2sls, iv_ratio, two_stage_least_squares, TslsFit};
pub use rdd::{rdd_fuzzy, rdd_sharp, RddSpec};
pub use synth::{project_simplex, sc_fit, sc_weights, ScFit, ScProblem};
