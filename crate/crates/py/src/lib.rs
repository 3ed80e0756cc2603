//! Python bindings. Data crosses the boundary as plain lists: covariates are
//! a list of rows.

use std::collections::BTreeMap;

use causal_core::estimators::{self, OrSpec};
use causal_core::panel::{fit_panel, PanelMethod, PanelSpec};
use causal_core::propensity::{estimate_propensity_binary, estimate_propensity_multivalued, trim_overlap, PropensityFit};
use causal_core::quasi::{self, DidDataset, RddSpec};
use causal_core::simulate::{self as sim, CaseId, DgpSpec, MonteCarloOptions};
use causal_core::variance::bootstrap_variance;
use causal_core::{validate, CausalEstimate, Estimand, ObservationalDataset, PanelDataset, RawColumns, TreatmentKind};
use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

create_exception!(causal_py, CausalError, PyValueError);

fn err(e: causal_core::CausalError) -> PyErr {
    CausalError::new_err(e.to_string())
}

/// Row-major list of rows into an `n x p` matrix; `None` gives zero columns.
fn matrix_from_rows(rows: Option<Vec<Vec<f64>>>, n: usize) -> Result<DMatrix<f64>, String> {
    let Some(rows) = rows else {
        return Ok(DMatrix::zeros(n, 0));
    };
    if rows.len() != n {
        return Err(format!("expected {n} covariate rows, got {}", rows.len()));
    }
    let p = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().position(|r| r.len() != p) {
        return Err(format!("row {bad} has {} values, expected {p}", rows[bad].len()));
    }
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

fn rows_arg(rows: Option<Vec<Vec<f64>>>, n: usize) -> PyResult<DMatrix<f64>> {
    matrix_from_rows(rows, n).map_err(CausalError::new_err)
}

/// A point estimate with optional variance, interval and diagnostics.
#[pyclass(name = "Estimate", module = "causal_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyEstimate {
    #[pyo3(get)]
    method: String,
    #[pyo3(get)]
    estimand: String,
    #[pyo3(get)]
    dose: f64,
    #[pyo3(get)]
    reference: Option<f64>,
    #[pyo3(get)]
    point: f64,
    #[pyo3(get)]
    variance: Option<f64>,
    #[pyo3(get)]
    ci: Option<(f64, f64)>,
    #[pyo3(get)]
    n_used: usize,
    #[pyo3(get)]
    diagnostics: BTreeMap<String, f64>,
}

impl From<CausalEstimate> for PyEstimate {
    fn from(e: CausalEstimate) -> Self {
        Self {
            method: e.method,
            estimand: match e.estimand {
                Estimand::Ate => "ate".into(),
                Estimand::Apo => "apo".into(),
            },
            dose: e.dose,
            reference: e.reference,
            point: e.point,
            variance: e.variance,
            ci: e.ci,
            n_used: e.n_used,
            diagnostics: e.diagnostics,
        }
    }
}

#[pymethods]
impl PyEstimate {
    #[getter]
    fn standard_error(&self) -> Option<f64> {
        self.variance.map(f64::sqrt)
    }

    fn __repr__(&self) -> String {
        match self.variance {
            Some(v) => format!("Estimate(method={:?}, point={:.6}, se={:.6})", self.method, self.point, v.sqrt()),
            None => format!("Estimate(method={:?}, point={:.6})", self.method, self.point),
        }
    }
}

/// Validated cross-sectional data: outcome `y`, treatment `d`, covariate
/// rows `x`, optional instrument rows `z`, optional treatment `levels`.
#[pyclass(name = "Dataset", module = "causal_py", frozen)]
pub struct PyDataset {
    inner: ObservationalDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (y, d, x=None, z=None, levels=None))]
    fn new(
        y: Vec<f64>,
        d: Vec<f64>,
        x: Option<Vec<Vec<f64>>>,
        z: Option<Vec<Vec<f64>>>,
        levels: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let n = y.len();
        let mut raw = RawColumns::new(y, d, rows_arg(x, n)?);
        if z.is_some() {
            raw = raw.with_instruments(rows_arg(z, n)?);
        }
        if let Some(levels) = levels {
            raw = raw.with_kind(TreatmentKind::Multivalued(levels));
        }
        Ok(Self {
            inner: validate(raw).map_err(err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn n_covariates(&self) -> usize {
        self.inner.n_covariates()
    }

    #[getter]
    fn is_binary(&self) -> bool {
        self.inner.is_binary()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, covariates={})", self.inner.n(), self.inner.n_covariates())
    }
}

fn or_spec(covariates: Option<Vec<usize>>) -> OrSpec {
    match covariates {
        Some(c) => OrSpec::with_covariates(c),
        None => OrSpec::default(),
    }
}

fn propensity(ds: &ObservationalDataset, trim: Option<(f64, f64)>) -> causal_core::Result<(ObservationalDataset, PropensityFit)> {
    let ps = match ds.treatment_kind() {
        TreatmentKind::Multivalued(_) => estimate_propensity_multivalued(ds)?,
        _ => estimate_propensity_binary(ds)?,
    };
    match trim {
        Some((lo, hi)) if ds.is_binary() => {
            let (ps, keep) = trim_overlap(&ps, lo, hi)?;
            Ok((ds.select_rows(&keep), ps))
        }
        _ => Ok((ds.clone(), ps)),
    }
}

#[pyfunction]
fn difference_in_means(ds: &PyDataset) -> PyResult<PyEstimate> {
    causal_core::difference_in_means(&ds.inner).map(Into::into).map_err(err)
}

/// Outcome-regression ATE with a delta-method variance.
#[pyfunction]
#[pyo3(signature = (ds, covariates=None, dose=1.0, reference=0.0))]
fn ate_or(ds: &PyDataset, covariates: Option<Vec<usize>>, dose: f64, reference: f64) -> PyResult<PyEstimate> {
    estimators::ate_or(&ds.inner, &or_spec(covariates), dose, reference)
        .map(Into::into)
        .map_err(err)
}

/// Inverse probability weighting with a fitted logistic score.
#[pyfunction]
#[pyo3(signature = (ds, dose=1.0, reference=0.0, trim=Some((0.01, 0.99))))]
fn ate_ipw(ds: &PyDataset, dose: f64, reference: f64, trim: Option<(f64, f64)>) -> PyResult<PyEstimate> {
    let (kept, ps) = propensity(&ds.inner, trim).map_err(err)?;
    estimators::ate_ipw(&kept, &ps, dose, reference).map(Into::into).map_err(err)
}

/// Doubly robust estimate combining the outcome model and the fitted score.
#[pyfunction]
#[pyo3(signature = (ds, covariates=None, dose=1.0, reference=0.0, trim=Some((0.01, 0.99))))]
fn ate_dr(
    ds: &PyDataset,
    covariates: Option<Vec<usize>>,
    dose: f64,
    reference: f64,
    trim: Option<(f64, f64)>,
) -> PyResult<PyEstimate> {
    let (kept, ps) = propensity(&ds.inner, trim).map_err(err)?;
    estimators::ate_dr(&kept, &or_spec(covariates), &ps, dose, reference)
        .map(Into::into)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (ds, degree=2))]
fn ate_psr(ds: &PyDataset, degree: usize) -> PyResult<PyEstimate> {
    let ps = estimate_propensity_binary(&ds.inner).map_err(err)?;
    estimators::ate_psr(&ds.inner, &ps, 1.0, 0.0, degree).map(Into::into).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (ds, strata=5))]
fn ate_stratification(ds: &PyDataset, strata: usize) -> PyResult<PyEstimate> {
    let ps = estimate_propensity_binary(&ds.inner).map_err(err)?;
    estimators::ate_stratification(&ds.inner, &ps, strata).map(Into::into).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (ds, matches=1))]
fn ate_matching(ds: &PyDataset, matches: usize) -> PyResult<PyEstimate> {
    let ps = estimate_propensity_binary(&ds.inner).map_err(err)?;
    estimators::ate_matching(&ds.inner, &ps, matches).map(Into::into).map_err(err)
}

/// Two-stage least squares using the dataset's instruments.
#[pyfunction]
fn ate_2sls(ds: &PyDataset) -> PyResult<PyEstimate> {
    quasi::ate_2sls(&ds.inner).map(Into::into).map_err(err)
}

#[pyfunction]
fn iv_ratio(y: Vec<f64>, d: Vec<f64>, z: Vec<f64>) -> PyResult<PyEstimate> {
    quasi::iv_ratio(&y, &d, &z).map(Into::into).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (y, t, cutoff=0.0, bandwidth=None))]
fn rdd_sharp(y: Vec<f64>, t: Vec<f64>, cutoff: f64, bandwidth: Option<f64>) -> PyResult<PyEstimate> {
    quasi::rdd_sharp(&y, &t, cutoff, &RddSpec { bandwidth }).map(Into::into).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (y, t, d, cutoff=0.0, bandwidth=None))]
fn rdd_fuzzy(y: Vec<f64>, t: Vec<f64>, d: Vec<f64>, cutoff: f64, bandwidth: Option<f64>) -> PyResult<PyEstimate> {
    quasi::rdd_fuzzy(&y, &t, &d, cutoff, &RddSpec { bandwidth }).map(Into::into).map_err(err)
}

/// Two-group, two-period difference in differences.
#[pyfunction]
#[pyo3(signature = (y, group, period, x=None))]
fn did(y: Vec<f64>, group: Vec<i64>, period: Vec<i64>, x: Option<Vec<Vec<f64>>>) -> PyResult<PyEstimate> {
    let n = y.len();
    let has_x = x.is_some();
    let mut dd = DidDataset::new(y, group, period).map_err(err)?;
    if has_x {
        dd = dd.with_covariates(rows_arg(x, n)?).map_err(err)?;
        return quasi::ate_did_covariates(&dd).map(Into::into).map_err(err);
    }
    quasi::ate_did(&dd).map(Into::into).map_err(err)
}

/// Panel regression: method is one of pols, re, fe, fd, cre.
#[pyfunction]
#[pyo3(signature = (unit, time, y, d, x=None, method="fe"))]
fn panel(
    unit: Vec<i64>,
    time: Vec<i64>,
    y: Vec<f64>,
    d: Vec<f64>,
    x: Option<Vec<Vec<f64>>>,
    method: &str,
) -> PyResult<PyEstimate> {
    let m: PanelMethod = method.parse().map_err(err)?;
    let n = y.len();
    let pds = PanelDataset::new(unit, time, y, d, rows_arg(x, n)?).map_err(err)?;
    fit_panel(&pds, &PanelSpec::new(m)).map(Into::into).map_err(err)
}

/// Nonparametric bootstrap of a cross-sectional estimator named by `method`
/// (dim, or, ipw, dr); returns the point estimate with bootstrap variance
/// and percentile interval.
#[pyfunction]
#[pyo3(signature = (ds, method, replicates=200, seed=42))]
fn bootstrap(ds: &PyDataset, method: &str, replicates: usize, seed: u64) -> PyResult<PyEstimate> {
    let f = |d: &ObservationalDataset| -> causal_core::Result<CausalEstimate> {
        match method {
            "dim" => causal_core::difference_in_means(d),
            "or" => estimators::ate_or(d, &OrSpec::default(), 1.0, 0.0),
            "ipw" => {
                let (kept, ps) = propensity(d, Some((0.01, 0.99)))?;
                estimators::ate_ipw(&kept, &ps, 1.0, 0.0)
            }
            "dr" => {
                let (kept, ps) = propensity(d, Some((0.01, 0.99)))?;
                estimators::ate_dr(&kept, &OrSpec::default(), &ps, 1.0, 0.0)
            }
            other => Err(causal_core::CausalError::InvalidArgument(format!(
                "bootstrap supports dim, or, ipw, dr; got {other}"
            ))),
        }
    };
    let est = f(&ds.inner).map_err(err)?;
    let boot = bootstrap_variance(|d| f(d).map(|e| e.point), &ds.inner, replicates, seed).map_err(err)?;
    Ok(boot.apply(est).into())
}

/// Aggregated Monte Carlo results for one case study.
#[pyclass(name = "MonteCarloReport", module = "causal_py", frozen)]
pub struct PyReport {
    inner: sim::MonteCarloReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn case(&self) -> String {
        self.inner.case.to_string()
    }

    #[getter]
    fn true_tau(&self) -> f64 {
        self.inner.true_tau
    }

    #[getter]
    fn runs(&self) -> usize {
        self.inner.runs
    }

    #[getter]
    fn methods(&self) -> Vec<String> {
        self.inner.rows.iter().map(|r| r.method.clone()).collect()
    }

    /// `{method: {"av_est", "emp_var", "mse", "failed"}}`
    fn summary(&self) -> BTreeMap<String, BTreeMap<String, f64>> {
        self.inner
            .rows
            .iter()
            .map(|r| {
                let cells = BTreeMap::from([
                    ("av_est".to_string(), r.av_est),
                    ("emp_var".to_string(), r.emp_var),
                    ("mse".to_string(), r.mse),
                    ("failed".to_string(), r.failed as f64),
                ]);
                (r.method.clone(), cells)
            })
            .collect()
    }

    /// Per-run estimates of one method (`None` for failed runs).
    fn estimates(&self, method: &str) -> PyResult<Vec<Option<f64>>> {
        let k = self
            .inner
            .rows
            .iter()
            .position(|r| r.method == method)
            .ok_or_else(|| CausalError::new_err(format!("no method {method} in report")))?;
        Ok(self.inner.estimates[k].clone())
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    fn runs_csv(&self) -> String {
        self.inner.runs_csv()
    }

    fn __repr__(&self) -> String {
        format!("MonteCarloReport(case={}, runs={}, methods={:?})", self.inner.case, self.inner.runs, self.methods())
    }
}

#[pyfunction]
fn case_methods(case: &str) -> PyResult<Vec<String>> {
    let case: CaseId = case.parse().map_err(err)?;
    Ok(sim::case_methods(case).iter().map(|s| s.to_string()).collect())
}

/// Run a case study. `params` overrides design parameters by name.
#[pyfunction]
#[pyo3(signature = (case, runs=1000, n=1000, seed=42, methods=None, jobs=None, params=None))]
fn simulate(
    py: Python<'_>,
    case: &str,
    runs: usize,
    n: usize,
    seed: u64,
    methods: Option<Vec<String>>,
    jobs: Option<usize>,
    params: Option<BTreeMap<String, f64>>,
) -> PyResult<PyReport> {
    let case: CaseId = case.parse().map_err(err)?;
    let mut spec = DgpSpec::new(case, n).map_err(err)?;
    for (k, v) in params.unwrap_or_default() {
        spec = spec.with_param(&k, v).map_err(err)?;
    }
    let methods = methods.unwrap_or_else(|| sim::case_methods(case).iter().map(|s| s.to_string()).collect());
    let opts = MonteCarloOptions { runs, seed, jobs };
    let report = py
        .detach(|| sim::run_monte_carlo(&spec, &methods, opts))
        .map_err(err)?;
    Ok(PyReport { inner: report })
}

#[pymodule]
fn causal_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CausalError", m.py().get_type::<CausalError>())?;
    m.add_class::<PyEstimate>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(difference_in_means, m)?)?;
    m.add_function(wrap_pyfunction!(ate_or, m)?)?;
    m.add_function(wrap_pyfunction!(ate_ipw, m)?)?;
    m.add_function(wrap_pyfunction!(ate_dr, m)?)?;
    m.add_function(wrap_pyfunction!(ate_psr, m)?)?;
    m.add_function(wrap_pyfunction!(ate_stratification, m)?)?;
    m.add_function(wrap_pyfunction!(ate_matching, m)?)?;
    m.add_function(wrap_pyfunction!(ate_2sls, m)?)?;
    m.add_function(wrap_pyfunction!(iv_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(rdd_sharp, m)?)?;
    m.add_function(wrap_pyfunction!(rdd_fuzzy, m)?)?;
    m.add_function(wrap_pyfunction!(did, m)?)?;
    m.add_function(wrap_pyfunction!(panel, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap, m)?)?;
    m.add_function(wrap_pyfunction!(case_methods, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
