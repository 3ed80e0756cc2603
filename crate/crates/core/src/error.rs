use thiserror::Error;

/// Errors raised by validation, model fitting and the estimators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CausalError {
    #[error("column length mismatch: {column} has length {found}, expected {expected}")]
    LengthMismatch {
        column: String,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in column {column} at row {row}")]
    NonFiniteValue { column: String, row: usize },
    #[error("dataset must contain at least two rows")]
    EmptyDataset,
    #[error("treatment value {value} at row {row} is not in the declared level set")]
    InvalidTreatmentValue { row: usize, value: f64 },
    #[error("treatment arm {arm} has no units")]
    EmptyTreatmentArm { arm: u8 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("design matrix is rank deficient (singular value ratio {ratio:.3e})")]
    RankDeficient { ratio: f64 },
    #[error("complete or quasi-complete separation detected in logistic fit")]
    SeparationDetected,
    #[error("treatment has no variation")]
    NoVariationInD,
    #[error("iterative fit did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },
    #[error("residual scale {sigma:.3e} is below the floor")]
    SigmaFloor { sigma: f64 },
    #[error("every unit was removed by overlap trimming")]
    AllUnitsTrimmed,
    #[error("propensity score {score:.3e} at row {row} is below the floor")]
    ZeroPropensity { row: usize, score: f64 },
    #[error("no units observed at dose {dose}")]
    EmptyDoseGroup { dose: f64 },
    #[error("no propensity stratum contains both treated and control units")]
    NoUsableStratum,
    #[error("need {needed} matches but the opposite arm has only {available} units")]
    InsufficientMatches { needed: usize, available: usize },
    #[error("treatment does not vary within units")]
    NoWithinVariation,
    #[error("unit {unit} has fewer than two periods")]
    TooFewPeriods { unit: i64 },
    #[error("duplicate (unit, time) pair ({unit}, {time})")]
    DuplicatePanelKey { unit: i64, time: i64 },
    #[error("instrument covariance with treatment is zero or too small ({cov:.3e})")]
    WeakOrZeroFirstStage { cov: f64 },
    #[error("order condition violated: {instruments} instruments for {endogenous} endogenous regressors")]
    OrderConditionViolated {
        instruments: usize,
        endogenous: usize,
    },
    #[error("difference-in-differences cell (group {group}, period {period}) is empty")]
    EmptyCell { group: i64, period: i64 },
    #[error("synthetic control problem is degenerate: all donors are identical")]
    DegenerateProblem,
    #[error("running variable has no observations on the {side} side of the cutoff")]
    OneSidedData { side: &'static str },
    #[error("first-stage jump {jump:.4} at the cutoff is below the minimum")]
    NoFirstStageJump { jump: f64 },
    #[error("{failed} of {total} bootstrap replicates failed")]
    TooManyFailedReplicates { failed: usize, total: usize },
    #[error("fitted model carries no coefficient covariance")]
    MissingCoefCovariance,
    #[error("unknown case study {0}")]
    UnknownCase(String),
    #[error("reference table has no cell for method {method}, column {column}")]
    MissingReferenceCell { method: String, column: String },
    #[error("method {method} failed in {failed} of {total} runs")]
    TooManyFailedRuns {
        method: String,
        failed: usize,
        total: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, CausalError>;
