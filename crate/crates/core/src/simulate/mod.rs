//! Monte Carlo harness for the six simulation case studies.

pub mod dgp;
pub mod monte_carlo;
pub mod reference;
pub mod rng;

pub use dgp::{generate, CaseId, DgpSpec, SimData, Variant};
pub use monte_carlo::{
    calibrate_cs1_spread, case_methods, run_monte_carlo, MethodSummary, MonteCarloOptions,
    MonteCarloReport, SpreadCalibration,
};
pub use reference::{compare_to_reference, Check, Column, ReferenceTable, Rule, Tolerances, Verdict};
