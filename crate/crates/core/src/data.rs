//! Validated datasets and the estimate record shared by every estimator.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CausalError, Result};

/// How the treatment column is coded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreatmentKind {
    Binary,
    /// Finite set of declared dose levels.
    Multivalued(Vec<f64>),
    Continuous,
}

/// Unvalidated columns as handed over by a caller or the CSV loader.
#[derive(Debug, Clone, PartialEq)]
pub struct RawColumns {
    pub y: Vec<f64>,
    pub d: Vec<f64>,
    /// n×p covariates; may have zero columns.
    pub x: DMatrix<f64>,
    pub z: Option<DMatrix<f64>>,
    /// `None` detects binary coding automatically.
    pub treatment_kind: Option<TreatmentKind>,
}

impl RawColumns {
    pub fn new(y: Vec<f64>, d: Vec<f64>, x: DMatrix<f64>) -> Self {
        Self {
            y,
            d,
            x,
            z: None,
            treatment_kind: None,
        }
    }

    pub fn with_instruments(mut self, z: DMatrix<f64>) -> Self {
        self.z = Some(z);
        self
    }

    pub fn with_kind(mut self, kind: TreatmentKind) -> Self {
        self.treatment_kind = Some(kind);
        self
    }
}

/// Cross-sectional data `(y_i, d_i, x_i[, z_i])`. Immutable once validated.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationalDataset {
    y: Vec<f64>,
    d: Vec<f64>,
    x: DMatrix<f64>,
    z: Option<DMatrix<f64>>,
    treatment_kind: TreatmentKind,
}

fn check_finite(column: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    for (row, v) in values.into_iter().enumerate() {
        if !v.is_finite() {
            return Err(CausalError::NonFiniteValue {
                column: column.to_string(),
                row,
            });
        }
    }
    Ok(())
}

fn check_matrix_finite(column: &str, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_finite() {
                return Err(CausalError::NonFiniteValue {
                    column: format!("{column}[{j}]"),
                    row: i,
                });
            }
        }
    }
    Ok(())
}

fn check_len(column: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(CausalError::LengthMismatch {
            column: column.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

pub(crate) fn is_binary(values: &[f64]) -> bool {
    values.iter().all(|&v| v == 0.0 || v == 1.0)
}

/// Validate raw columns into a dataset.
pub fn validate(raw: RawColumns) -> Result<ObservationalDataset> {
    let n = raw.y.len();
    if n < 2 {
        return Err(CausalError::EmptyDataset);
    }
    check_len("d", n, raw.d.len())?;
    check_len("x", n, raw.x.nrows())?;
    if let Some(z) = &raw.z {
        check_len("z", n, z.nrows())?;
    }
    check_finite("y", raw.y.iter().copied())?;
    check_finite("d", raw.d.iter().copied())?;
    check_matrix_finite("x", &raw.x)?;
    if let Some(z) = &raw.z {
        check_matrix_finite("z", z)?;
    }

    let kind = match raw.treatment_kind {
        None => {
            if is_binary(&raw.d) {
                TreatmentKind::Binary
            } else {
                TreatmentKind::Continuous
            }
        }
        Some(TreatmentKind::Binary) => {
            if let Some((row, &value)) = raw
                .d
                .iter()
                .enumerate()
                .find(|(_, &v)| v != 0.0 && v != 1.0)
            {
                return Err(CausalError::InvalidTreatmentValue { row, value });
            }
            TreatmentKind::Binary
        }
        Some(TreatmentKind::Multivalued(mut levels)) => {
            check_finite("levels", levels.iter().copied())?;
            levels.sort_by(f64::total_cmp);
            levels.dedup();
            if levels.is_empty() {
                return Err(CausalError::InvalidArgument(
                    "multivalued treatment needs at least one level".into(),
                ));
            }
            if let Some((row, &value)) = raw
                .d
                .iter()
                .enumerate()
                .find(|(_, v)| !levels.contains(v))
            {
                return Err(CausalError::InvalidTreatmentValue { row, value });
            }
            TreatmentKind::Multivalued(levels)
        }
        Some(TreatmentKind::Continuous) => TreatmentKind::Continuous,
    };

    Ok(ObservationalDataset {
        y: raw.y,
        d: raw.d,
        x: raw.x,
        z: raw.z,
        treatment_kind: kind,
    })
}

impl ObservationalDataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> Option<&DMatrix<f64>> {
        self.z.as_ref()
    }

    pub fn treatment_kind(&self) -> &TreatmentKind {
        &self.treatment_kind
    }

    pub fn is_binary(&self) -> bool {
        matches!(self.treatment_kind, TreatmentKind::Binary)
    }

    /// Round-trips the dataset back into raw columns with its kind pinned.
    pub fn to_raw(&self) -> RawColumns {
        RawColumns {
            y: self.y.clone(),
            d: self.d.clone(),
            x: self.x.clone(),
            z: self.z.clone(),
            treatment_kind: Some(self.treatment_kind.clone()),
        }
    }

    /// Rows selected by `indices` (repeats allowed). Keeps the treatment kind.
    pub fn select_rows(&self, indices: &[usize]) -> ObservationalDataset {
        let pick = |m: &DMatrix<f64>| {
            DMatrix::from_fn(indices.len(), m.ncols(), |i, j| m[(indices[i], j)])
        };
        ObservationalDataset {
            y: indices.iter().map(|&i| self.y[i]).collect(),
            d: indices.iter().map(|&i| self.d[i]).collect(),
            x: pick(&self.x),
            z: self.z.as_ref().map(pick),
            treatment_kind: self.treatment_kind.clone(),
        }
    }

    pub(crate) fn require_binary(&self) -> Result<()> {
        if !self.is_binary() {
            return Err(CausalError::InvalidArgument(
                "estimator requires a binary treatment".into(),
            ));
        }
        Ok(())
    }
}

/// Target of an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimand {
    /// Average treatment effect between a dose and a reference dose.
    Ate,
    /// Average potential outcome at a single dose.
    Apo,
}

/// Point estimate with optional uncertainty and free-form diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalEstimate {
    pub estimand: Estimand,
    pub method: String,
    pub dose: f64,
    pub reference: Option<f64>,
    pub point: f64,
    pub variance: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub n_used: usize,
    pub diagnostics: BTreeMap<String, f64>,
}

impl CausalEstimate {
    pub fn ate(method: &str, dose: f64, reference: f64, point: f64, n_used: usize) -> Self {
        Self {
            estimand: Estimand::Ate,
            method: method.to_string(),
            dose,
            reference: Some(reference),
            point,
            variance: None,
            ci: None,
            n_used,
            diagnostics: BTreeMap::new(),
        }
    }

    pub fn apo(method: &str, dose: f64, point: f64, n_used: usize) -> Self {
        Self {
            estimand: Estimand::Apo,
            method: method.to_string(),
            dose,
            reference: None,
            point,
            variance: None,
            ci: None,
            n_used,
            diagnostics: BTreeMap::new(),
        }
    }

    /// Attaches a variance and the matching normal 95% interval.
    pub fn with_variance(mut self, variance: f64) -> Self {
        let variance = variance.max(0.0);
        let half = 1.959_963_984_540_054 * variance.sqrt();
        self.variance = Some(variance);
        self.ci = Some((self.point - half, self.point + half));
        self
    }

    pub fn with_diagnostic(mut self, key: &str, value: f64) -> Self {
        self.diagnostics.insert(key.to_string(), value);
        self
    }

    pub fn standard_error(&self) -> Option<f64> {
        self.variance.map(f64::sqrt)
    }
}

/// Naive contrast of arm means for a binary treatment.
pub fn difference_in_means(ds: &ObservationalDataset) -> Result<CausalEstimate> {
    ds.require_binary()?;
    let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
    for (&y, &d) in ds.y().iter().zip(ds.d()) {
        if d == 1.0 {
            s1 += y;
            n1 += 1;
        } else {
            s0 += y;
            n0 += 1;
        }
    }
    if n1 == 0 {
        return Err(CausalError::EmptyTreatmentArm { arm: 1 });
    }
    if n0 == 0 {
        return Err(CausalError::EmptyTreatmentArm { arm: 0 });
    }
    let m1 = s1 / n1 as f64;
    let m0 = s0 / n0 as f64;

    let ss = |arm: f64, mean: f64| -> f64 {
        ds.y()
            .iter()
            .zip(ds.d())
            .filter(|(_, &d)| d == arm)
            .map(|(&y, _)| (y - mean).powi(2))
            .sum()
    };
    let mut est = CausalEstimate::ate("difference_in_means", 1.0, 0.0, m1 - m0, ds.n());
    if n1 > 1 && n0 > 1 {
        let v1 = ss(1.0, m1) / (n1 - 1) as f64;
        let v0 = ss(0.0, m0) / (n0 - 1) as f64;
        est = est.with_variance(v1 / n1 as f64 + v0 / n0 as f64);
    }
    Ok(est
        .with_diagnostic("n_treated", n1 as f64)
        .with_diagnostic("n_control", n0 as f64))
}

/// Longitudinal data indexed by `(unit, time)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    unit: Vec<i64>,
    time: Vec<i64>,
    y: Vec<f64>,
    d: Vec<f64>,
    x: DMatrix<f64>,
    /// Row indices per unit, ordered by time. Units in order of first appearance.
    groups: Vec<Vec<usize>>,
}

impl PanelDataset {
    pub fn new(
        unit: Vec<i64>,
        time: Vec<i64>,
        y: Vec<f64>,
        d: Vec<f64>,
        x: DMatrix<f64>,
    ) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(CausalError::EmptyDataset);
        }
        check_len("unit", n, unit.len())?;
        check_len("time", n, time.len())?;
        check_len("d", n, d.len())?;
        check_len("x", n, x.nrows())?;
        check_finite("y", y.iter().copied())?;
        check_finite("d", d.iter().copied())?;
        check_matrix_finite("x", &x)?;

        let mut order: Vec<i64> = Vec::new();
        let mut members: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (row, &u) in unit.iter().enumerate() {
            members
                .entry(u)
                .or_insert_with(|| {
                    order.push(u);
                    Vec::new()
                })
                .push(row);
        }
        let mut groups = Vec::with_capacity(order.len());
        for u in order {
            let mut rows = members.remove(&u).unwrap_or_default();
            rows.sort_by_key(|&r| time[r]);
            for w in rows.windows(2) {
                if time[w[0]] == time[w[1]] {
                    return Err(CausalError::DuplicatePanelKey {
                        unit: u,
                        time: time[w[0]],
                    });
                }
            }
            groups.push(rows);
        }
        Ok(Self {
            unit,
            time,
            y,
            d,
            x,
            groups,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_units(&self) -> usize {
        self.groups.len()
    }

    pub fn unit(&self) -> &[i64] {
        &self.unit
    }

    pub fn time(&self) -> &[i64] {
        &self.time
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Row indices of each unit in time order.
    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Number of periods observed for each unit.
    pub fn periods(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    /// Panel built from whole units (repeats allowed); repeated units get fresh ids.
    pub fn select_units(&self, units: &[usize]) -> PanelDataset {
        let mut rows = Vec::new();
        let mut new_unit = Vec::new();
        for (k, &g) in units.iter().enumerate() {
            for &r in &self.groups[g] {
                rows.push(r);
                new_unit.push(k as i64);
            }
        }
        let x = DMatrix::from_fn(rows.len(), self.x.ncols(), |i, j| self.x[(rows[i], j)]);
        let mut groups = Vec::with_capacity(units.len());
        let mut offset = 0;
        for &g in units {
            let len = self.groups[g].len();
            groups.push((offset..offset + len).collect());
            offset += len;
        }
        PanelDataset {
            unit: new_unit,
            time: rows.iter().map(|&r| self.time[r]).collect(),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            d: rows.iter().map(|&r| self.d[r]).collect(),
            x,
            groups,
        }
    }
}
