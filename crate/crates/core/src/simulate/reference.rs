//! Golden reference tables and tolerance checks for Monte Carlo reports.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CausalError, Result};
use crate::simulate::monte_carlo::MonteCarloReport;

/// Maximum allowed mismatch in the `mse = emp_var + bias^2` identity.
pub const MSE_IDENTITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub av_est: Option<f64>,
    pub emp_var: Option<f64>,
    pub mse: Option<f64>,
}

/// Published cells keyed by method, read from `method,av_est,emp_var,mse` CSV.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTable {
    pub rows: BTreeMap<String, ReferenceRow>,
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    method: String,
    av_est: Option<f64>,
    emp_var: Option<f64>,
    mse: Option<f64>,
}

impl ReferenceTable {
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr
            .headers()
            .map_err(|e| CausalError::InvalidArgument(format!("reference table: {e}")))?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ["method", "av_est", "emp_var", "mse"] {
            return Err(CausalError::InvalidArgument(
                "reference table header must be method,av_est,emp_var,mse".into(),
            ));
        }
        let mut rows = BTreeMap::new();
        for rec in rdr.deserialize::<CsvRow>() {
            let r = rec.map_err(|e| CausalError::InvalidArgument(format!("reference table: {e}")))?;
            rows.insert(
                r.method,
                ReferenceRow {
                    av_est: r.av_est,
                    emp_var: r.emp_var,
                    mse: r.mse,
                },
            );
        }
        Ok(Self { rows })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CausalError::InvalidArgument(format!("{}: {e}", path.display())))?;
        Self::from_csv_str(&text)
    }

    fn cell(&self, method: &str, column: Column) -> Option<f64> {
        let row = self.rows.get(method)?;
        match column {
            Column::AvEst => row.av_est,
            Column::EmpVar => row.emp_var,
            Column::Mse => row.mse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Column {
    AvEst,
    EmpVar,
    Mse,
}

impl Column {
    fn name(self) -> &'static str {
        match self {
            Column::AvEst => "av_est",
            Column::EmpVar => "emp_var",
            Column::Mse => "mse",
        }
    }
}

/// One rule applied to a report cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// `|observed - reference| <= tol`
    Abs(f64),
    /// `|observed - reference| <= tol * |reference|`
    Rel(f64),
    GreaterThan(f64),
    LessThan(f64),
    /// `|observed - from| > at_least`
    AwayFrom { from: f64, at_least: f64 },
    /// `|observed - from| < within`
    Near { from: f64, within: f64 },
    /// `|observed - from| > |other cell - from|`
    FartherThan { method: String, from: f64 },
    /// `observed >= factor * other cell`
    AtLeastTimes { method: String, column: Column, factor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub method: String,
    pub column: Column,
    #[serde(flatten)]
    pub rule: Rule,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub checks: Vec<Check>,
}

impl Tolerances {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CausalError::InvalidArgument(format!("tolerance file: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CausalError::InvalidArgument(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub method: String,
    pub column: String,
    pub rule: String,
    pub observed: f64,
    pub reference: Option<f64>,
    pub pass: bool,
}

fn report_cell(report: &MonteCarloReport, method: &str, column: Column) -> Option<f64> {
    let row = report.row(method)?;
    Some(match column {
        Column::AvEst => row.av_est,
        Column::EmpVar => row.emp_var,
        Column::Mse => row.mse,
    })
}

/// Evaluate every check plus the internal MSE identity for each method.
pub fn compare_to_reference(
    report: &MonteCarloReport,
    reference: &ReferenceTable,
    tolerances: &Tolerances,
) -> Result<Vec<Verdict>> {
    let mut out = Vec::new();
    for r in &report.rows {
        let bias = r.av_est - report.true_tau;
        let recomputed = r.emp_var + bias * bias;
        out.push(Verdict {
            method: r.method.clone(),
            column: "mse".into(),
            rule: "identity emp_var + bias^2".into(),
            observed: r.mse,
            reference: Some(recomputed),
            pass: (r.mse - recomputed).abs() <= MSE_IDENTITY_TOL,
        });
    }
    for check in &tolerances.checks {
        let missing = || CausalError::MissingReferenceCell {
            method: check.method.clone(),
            column: check.column.name().into(),
        };
        let observed = report_cell(report, &check.method, check.column).ok_or_else(missing)?;
        let (reference_value, pass, rule) = match &check.rule {
            Rule::Abs(tol) => {
                let r = reference.cell(&check.method, check.column).ok_or_else(missing)?;
                (Some(r), (observed - r).abs() <= *tol, format!("abs {tol}"))
            }
            Rule::Rel(tol) => {
                let r = reference.cell(&check.method, check.column).ok_or_else(missing)?;
                (Some(r), (observed - r).abs() <= tol * r.abs(), format!("rel {tol}"))
            }
            Rule::GreaterThan(v) => (Some(*v), observed > *v, format!("> {v}")),
            Rule::LessThan(v) => (Some(*v), observed < *v, format!("< {v}")),
            Rule::AwayFrom { from, at_least } => (
                Some(*from),
                (observed - from).abs() > *at_least,
                format!("|x - {from}| > {at_least}"),
            ),
            Rule::Near { from, within } => (
                Some(*from),
                (observed - from).abs() < *within,
                format!("|x - {from}| < {within}"),
            ),
            Rule::FartherThan { method, from } => {
                let other = report_cell(report, method, check.column).ok_or_else(|| {
                    CausalError::MissingReferenceCell {
                        method: method.clone(),
                        column: check.column.name().into(),
                    }
                })?;
                (
                    Some(other),
                    (observed - from).abs() > (other - from).abs(),
                    format!("farther from {from} than {method}"),
                )
            }
            Rule::AtLeastTimes { method, column, factor } => {
                let other = report_cell(report, method, *column).ok_or_else(|| {
                    CausalError::MissingReferenceCell {
                        method: method.clone(),
                        column: column.name().into(),
                    }
                })?;
                (
                    Some(other),
                    observed >= factor * other,
                    format!(">= {factor} x {method}.{}", column.name()),
                )
            }
        };
        out.push(Verdict {
            method: check.method.clone(),
            column: check.column.name().into(),
            rule,
            observed,
            reference: reference_value,
            pass,
        });
    }
    Ok(out)
}
