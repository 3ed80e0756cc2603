use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::data::CausalEstimate;
use crate::error::{CausalError, Result};
use crate::regress;

/// Outcomes indexed by group and period, for difference-in-differences.
#[derive(Debug, Clone, PartialEq)]
pub struct DidDataset {
    y: Vec<f64>,
    group: Vec<i64>,
    period: Vec<i64>,
    x: Option<DMatrix<f64>>,
    treatment: Option<Vec<f64>>,
}

impl DidDataset {
    /// `group` is the ever-treated indicator (0/1) in the two-by-two design
    /// and an arbitrary group label in the multi-period design.
    pub fn new(y: Vec<f64>, group: Vec<i64>, period: Vec<i64>) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(CausalError::EmptyDataset);
        }
        for (name, len) in [("group", group.len()), ("period", period.len())] {
            if len != n {
                return Err(CausalError::LengthMismatch {
                    column: name.into(),
                    expected: n,
                    found: len,
                });
            }
        }
        if let Some(row) = y.iter().position(|v| !v.is_finite()) {
            return Err(CausalError::NonFiniteValue {
                column: "y".into(),
                row,
            });
        }
        Ok(Self {
            y,
            group,
            period,
            x: None,
            treatment: None,
        })
    }

    pub fn with_covariates(mut self, x: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != self.y.len() {
            return Err(CausalError::LengthMismatch {
                column: "x".into(),
                expected: self.y.len(),
                found: x.nrows(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            let row = (0..x.nrows())
                .find(|&i| x.row(i).iter().any(|v| !v.is_finite()))
                .unwrap_or(0);
            return Err(CausalError::NonFiniteValue {
                column: "x".into(),
                row,
            });
        }
        self.x = Some(x);
        Ok(self)
    }

    /// Group-by-period treatment indicator used by the multi-period design.
    pub fn with_treatment(mut self, treatment: Vec<f64>) -> Result<Self> {
        if treatment.len() != self.y.len() {
            return Err(CausalError::LengthMismatch {
                column: "treatment".into(),
                expected: self.y.len(),
                found: treatment.len(),
            });
        }
        self.treatment = Some(treatment);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn group(&self) -> &[i64] {
        &self.group
    }

    pub fn period(&self) -> &[i64] {
        &self.period
    }

    pub fn x(&self) -> Option<&DMatrix<f64>> {
        self.x.as_ref()
    }

    pub fn treatment(&self) -> Option<&[f64]> {
        self.treatment.as_deref()
    }

    fn check_two_by_two(&self) -> Result<()> {
        for (name, v) in [("group", &self.group), ("period", &self.period)] {
            if let Some(&bad) = v.iter().find(|&&g| g != 0 && g != 1) {
                return Err(CausalError::InvalidArgument(format!(
                    "two-by-two design needs {name} in {{0, 1}}, found {bad}"
                )));
            }
        }
        for g in 0..2 {
            for t in 0..2 {
                if !self.group.iter().zip(&self.period).any(|(&a, &b)| a == g && b == t) {
                    return Err(CausalError::EmptyCell { group: g, period: t });
                }
            }
        }
        Ok(())
    }

    fn base_columns(&self) -> Vec<Vec<f64>> {
        let g: Vec<f64> = self.group.iter().map(|&v| v as f64).collect();
        let t: Vec<f64> = self.period.iter().map(|&v| v as f64).collect();
        let gt = g.iter().zip(&t).map(|(a, b)| a * b).collect();
        vec![vec![1.0; self.n()], g, t, gt]
    }
}

fn design(cols: &[Vec<f64>], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

fn interaction_estimate(
    dd: &DidDataset,
    cols: &[Vec<f64>],
    index: usize,
    method: &str,
) -> Result<CausalEstimate> {
    let fit = regress::fit_ols(&design(cols, dd.n()), dd.y(), None)?;
    let mut est = CausalEstimate::ate(method, 1.0, 0.0, fit.coef[index], dd.n());
    if let Some(cov) = &fit.coef_cov {
        est = est.with_variance(cov[(index, index)]);
    }
    Ok(est)
}

/// Two-by-two estimate: the interaction coefficient of
/// `y ~ 1 + group + period + group:period`, i.e. the double difference of cell means.
pub fn ate_did(dd: &DidDataset) -> Result<CausalEstimate> {
    dd.check_two_by_two()?;
    interaction_estimate(dd, &dd.base_columns(), 3, "did")
}

/// Two-by-two regression augmented with the dataset's covariates.
pub fn ate_did_covariates(dd: &DidDataset) -> Result<CausalEstimate> {
    dd.check_two_by_two()?;
    let mut cols = dd.base_columns();
    if let Some(x) = dd.x() {
        cols.extend(x.column_iter().map(|c| c.iter().copied().collect()));
    }
    interaction_estimate(dd, &cols, 3, "did_covariates")
}

/// Multi-period regression on group dummies, period dummies and the
/// group-by-period treatment indicator (plus any covariates). Without an
/// explicit indicator the two-by-two interaction is used.
pub fn ate_did_multiperiod(dd: &DidDataset) -> Result<CausalEstimate> {
    let n = dd.n();
    let treat: Vec<f64> = match dd.treatment() {
        Some(t) => t.to_vec(),
        None => dd
            .group
            .iter()
            .zip(&dd.period)
            .map(|(&g, &t)| (g != 0 && t != 0) as u8 as f64)
            .collect(),
    };
    if treat.iter().all(|&v| v == treat[0]) {
        return Err(CausalError::InvalidArgument(
            "treatment indicator does not vary".into(),
        ));
    }
    let groups: BTreeSet<i64> = dd.group.iter().copied().collect();
    let periods: BTreeSet<i64> = dd.period.iter().copied().collect();
    let mut cols = vec![vec![1.0; n], treat];
    for &g in groups.iter().skip(1) {
        cols.push(dd.group.iter().map(|&v| (v == g) as u8 as f64).collect());
    }
    for &t in periods.iter().skip(1) {
        cols.push(dd.period.iter().map(|&v| (v == t) as u8 as f64).collect());
    }
    if let Some(x) = dd.x() {
        cols.extend(x.column_iter().map(|c| c.iter().copied().collect()));
    }
    Ok(interaction_estimate(dd, &cols, 1, "did_multiperiod")?
        .with_diagnostic("groups", groups.len() as f64)
        .with_diagnostic("periods", periods.len() as f64))
}
