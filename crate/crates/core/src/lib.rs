//! Causal effect estimation: outcome regression, propensity-score methods,
//! doubly robust estimators, panel models, instrumental variables,
//! difference-in-differences, synthetic control and regression discontinuity,
//! plus a seeded Monte Carlo harness for the standard simulation case studies.

pub mod data;
pub mod error;
pub mod io;
pub mod cli;
pub mod estimators;
pub mod panel;
pub mod propensity;
pub mod quasi;
pub mod regress;
pub mod simulate;
pub mod variance;

pub use data::{
    difference_in_means, validate, CausalEstimate, Estimand, ObservationalDataset, PanelDataset,
    RawColumns, TreatmentKind,
};
pub use error::{CausalError, Result};
