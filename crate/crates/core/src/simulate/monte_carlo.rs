use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CausalError, Result};
use crate::estimators::{ate_dr, ate_ipw, ate_or, OrSpec};
use crate::panel::{fit_panel, PanelMethod, PanelSpec};
use crate::propensity::{estimate_propensity_binary, PropensityFit};
use crate::quasi::{ate_2sls, ate_did, rdd_fuzzy, rdd_sharp, RddSpec};
use crate::data::{validate, RawColumns};
use crate::simulate::dgp::{generate, CaseId, DgpSpec, SimData, Variant};

/// A run is allowed to fail for at most this share of runs per method.
pub const MAX_FAILED_RUN_SHARE: f64 = 0.05;

/// Method labels for each case, in report order.
pub fn case_methods(case: CaseId) -> &'static [&'static str] {
    match case {
        CaseId::Cs1 => &["OR1", "OR2", "PS1", "PS2", "DR1", "DR2", "DR3"],
        CaseId::Cs2 | CaseId::Cs3 => &["POLS", "RE", "FD", "FE", "CRE"],
        CaseId::Cs4 => &["OR_correct", "OR_naive", "IV1", "IV2"],
        CaseId::Cs5 => &["DID1", "DID2"],
        CaseId::Cs6 => &["RDD1", "RDD2", "RDD3"],
    }
}

fn method_variant(case: CaseId, method: &str) -> Variant {
    match (case, method) {
        (CaseId::Cs5, "DID2") => Variant::TrendViolation,
        (CaseId::Cs6, "RDD2" | "RDD3") => Variant::Fuzzy,
        _ => Variant::Base,
    }
}

fn check_methods(case: CaseId, methods: &[String]) -> Result<()> {
    let known = case_methods(case);
    if methods.is_empty() {
        return Err(CausalError::InvalidArgument("no methods requested".into()));
    }
    for m in methods {
        if !known.contains(&m.as_str()) {
            return Err(CausalError::InvalidArgument(format!(
                "case {case} has no method {m}; expected one of {}",
                known.join(", ")
            )));
        }
    }
    Ok(())
}

/// Lazily shared per-run quantities (the case 1 propensity fits).
struct Cs1Fits {
    correct: Option<Result<PropensityFit>>,
    bad: Option<Result<PropensityFit>>,
}

/// Apply one method to one simulated dataset.
fn estimate(case: CaseId, method: &str, data: &SimData, cache: &mut Cs1Fits) -> Result<f64> {
    let mismatch = || CausalError::InvalidArgument(format!("method {method} got the wrong data shape"));
    match (case, data) {
        (CaseId::Cs1, SimData::Cross { ds, bad_scores }) => {
            let mut correct = || -> Result<PropensityFit> {
                cache.correct.get_or_insert_with(|| estimate_propensity_binary(ds)).clone()
            };
            let full = OrSpec::default();
            let naive = OrSpec::treatment_only();
            let point = match method {
                "OR1" => ate_or(ds, &full, 1.0, 0.0)?,
                "OR2" => ate_or(ds, &naive, 1.0, 0.0)?,
                "PS1" => ate_ipw(ds, &correct()?, 1.0, 0.0)?,
                "DR1" => ate_dr(ds, &naive, &correct()?, 1.0, 0.0)?,
                "PS2" | "DR2" | "DR3" => {
                    let scores = bad_scores.clone().ok_or_else(mismatch)?;
                    let bad = cache
                        .bad
                        .get_or_insert_with(|| PropensityFit::from_scores(scores))
                        .clone()?;
                    match method {
                        "PS2" => ate_ipw(ds, &bad, 1.0, 0.0)?,
                        "DR2" => ate_dr(ds, &full, &bad, 1.0, 0.0)?,
                        _ => ate_dr(ds, &naive, &bad, 1.0, 0.0)?,
                    }
                }
                _ => return Err(mismatch()),
            };
            Ok(point.point)
        }
        (CaseId::Cs2 | CaseId::Cs3, SimData::Panel(p)) => {
            let m: PanelMethod = method.parse()?;
            Ok(fit_panel(p, &PanelSpec::new(m))?.point)
        }
        (CaseId::Cs4, SimData::Cross { ds, .. }) => match method {
            "OR_correct" => Ok(ate_or(ds, &OrSpec::default(), 1.0, 0.0)?.point),
            "OR_naive" => Ok(ate_or(ds, &OrSpec::treatment_only(), 1.0, 0.0)?.point),
            "IV1" | "IV2" => {
                let z = ds.z().ok_or_else(mismatch)?;
                let col = if method == "IV1" { 0 } else { 1 };
                let raw = RawColumns::new(ds.y().to_vec(), ds.d().to_vec(), nalgebra::DMatrix::zeros(ds.n(), 0))
                    .with_instruments(z.columns(col, 1).into_owned());
                Ok(ate_2sls(&validate(raw)?)?.point)
            }
            _ => Err(mismatch()),
        },
        (CaseId::Cs5, SimData::Did(dd)) => Ok(ate_did(dd)?.point),
        (CaseId::Cs6, SimData::Rdd { y, t, d, cutoff }) => match method {
            "RDD1" | "RDD2" => Ok(rdd_sharp(y, t, *cutoff, &RddSpec::default())?.point),
            "RDD3" => Ok(rdd_fuzzy(y, t, d, *cutoff, &RddSpec::default())?.point),
            _ => Err(mismatch()),
        },
        _ => Err(mismatch()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarloOptions {
    pub runs: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool. Results do not depend on it.
    pub jobs: Option<usize>,
}

/// Aggregates for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub av_est: f64,
    /// Variance of the per-run estimates (divisor R - 1).
    pub emp_var: f64,
    /// `emp_var + (av_est - tau)^2`.
    pub mse: f64,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub case: CaseId,
    pub n: usize,
    pub runs: usize,
    pub seed: u64,
    pub true_tau: f64,
    pub rows: Vec<MethodSummary>,
    /// Per-run estimates by method (same order as `rows`); `None` marks a failed run.
    pub estimates: Vec<Vec<Option<f64>>>,
}

impl MonteCarloReport {
    pub fn row(&self, method: &str) -> Option<&MethodSummary> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Successful per-run estimates of a method.
    pub fn estimates_of(&self, method: &str) -> Option<Vec<f64>> {
        let k = self.rows.iter().position(|r| r.method == method)?;
        Some(self.estimates[k].iter().flatten().copied().collect())
    }

    /// `method,av_est,emp_var,mse` table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,av_est,emp_var,mse\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.method, r.av_est, r.emp_var, r.mse));
        }
        out
    }

    /// One row per run with one column per method; failed runs are empty cells.
    pub fn runs_csv(&self) -> String {
        let mut out = String::from("run");
        for r in &self.rows {
            out.push(',');
            out.push_str(&r.method);
        }
        out.push('\n');
        for run in 0..self.runs {
            out.push_str(&run.to_string());
            for col in &self.estimates {
                out.push(',');
                if let Some(v) = col[run] {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        out
    }
}

fn summarize(method: &str, values: &[Option<f64>], tau: f64) -> Result<MethodSummary> {
    let ok: Vec<f64> = values.iter().flatten().copied().collect();
    let failed = values.len() - ok.len();
    if failed as f64 > MAX_FAILED_RUN_SHARE * values.len() as f64 || ok.len() < 2 {
        return Err(CausalError::TooManyFailedRuns {
            method: method.to_string(),
            failed,
            total: values.len(),
        });
    }
    let r = ok.len() as f64;
    let mean = ok.iter().sum::<f64>() / r;
    let emp_var = ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
    Ok(MethodSummary {
        method: method.to_string(),
        av_est: mean,
        emp_var,
        mse: emp_var + (mean - tau).powi(2),
        failed,
    })
}

/// Simulate `runs` datasets and apply every requested method to each.
/// Runs execute in parallel; aggregation is sequential in run order so the
/// report is bit-identical for any thread count.
pub fn run_monte_carlo(spec: &DgpSpec, methods: &[String], opts: MonteCarloOptions) -> Result<MonteCarloReport> {
    if opts.runs < 2 {
        return Err(CausalError::InvalidArgument("need at least two runs".into()));
    }
    check_methods(spec.case, methods)?;
    let variants: BTreeSet<Variant> = methods.iter().map(|m| method_variant(spec.case, m)).collect();

    let one_run = |run: usize| -> Result<Vec<Option<f64>>> {
        let mut out = vec![None; methods.len()];
        for &variant in &variants {
            let data = generate(spec, variant, opts.seed, run as u64)?;
            let mut cache = Cs1Fits { correct: None, bad: None };
            for (k, m) in methods.iter().enumerate() {
                if method_variant(spec.case, m) == variant {
                    out[k] = estimate(spec.case, m, &data, &mut cache).ok().filter(|v| v.is_finite());
                }
            }
        }
        Ok(out)
    };
    let per_run: Vec<Result<Vec<Option<f64>>>> = match opts.jobs {
        Some(jobs) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.max(1))
                .build()
                .map_err(|e| CausalError::InvalidArgument(e.to_string()))?;
            pool.install(|| (0..opts.runs).into_par_iter().map(one_run).collect())
        }
        None => (0..opts.runs).into_par_iter().map(one_run).collect(),
    };
    let per_run = per_run.into_iter().collect::<Result<Vec<_>>>()?;

    let tau = spec.true_tau();
    let mut rows = Vec::with_capacity(methods.len());
    let mut estimates = Vec::with_capacity(methods.len());
    for (k, m) in methods.iter().enumerate() {
        let col: Vec<Option<f64>> = per_run.iter().map(|r| r[k]).collect();
        rows.push(summarize(m, &col, tau)?);
        estimates.push(col);
    }
    Ok(MonteCarloReport {
        case: spec.case,
        n: spec.n,
        runs: opts.runs,
        seed: opts.seed,
        true_tau: tau,
        rows,
        estimates,
    })
}

/// Outcome of comparing the two readings of the case 1 covariate spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadCalibration {
    pub target: f64,
    pub mean_if_variance: f64,
    pub mean_if_sd: f64,
    pub chosen: String,
}

/// Run the treatment-only outcome regression under both readings of the
/// covariate spread parameter and keep the one whose mean is nearer `target`.
pub fn calibrate_cs1_spread(n: usize, runs: usize, seed: u64, target: f64) -> Result<SpreadCalibration> {
    let methods = vec!["OR2".to_string()];
    let opts = MonteCarloOptions { runs, seed, jobs: None };
    let mean_for = |is_var: f64| -> Result<f64> {
        let spec = DgpSpec::new(CaseId::Cs1, n)?.with_param("x_spread_is_variance", is_var)?;
        Ok(run_monte_carlo(&spec, &methods, opts)?.rows[0].av_est)
    };
    let v = mean_for(1.0)?;
    let s = mean_for(0.0)?;
    let chosen = if (v - target).abs() <= (s - target).abs() { "variance" } else { "standard_deviation" };
    Ok(SpreadCalibration {
        target,
        mean_if_variance: v,
        mean_if_sd: s,
        chosen: chosen.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all(case: CaseId) -> Vec<String> {
        case_methods(case).iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn small_runs_are_reproducible() {
        for case in CaseId::ALL {
            let spec = DgpSpec::new(case, 200).unwrap();
            let opts = MonteCarloOptions { runs: 3, seed: 42, jobs: None };
            let a = run_monte_carlo(&spec, &all(case), opts).unwrap();
            let b = run_monte_carlo(&spec, &all(case), MonteCarloOptions { jobs: Some(1), ..opts }).unwrap();
            assert_eq!(a, b, "{case}");
            assert_eq!(a.to_csv(), b.to_csv());
            for r in &a.rows {
                let bias = r.av_est - a.true_tau;
                assert!((r.mse - (r.emp_var + bias * bias)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn unknown_method_rejected() {
        let spec = DgpSpec::new(CaseId::Cs5, 50).unwrap();
        let opts = MonteCarloOptions { runs: 2, seed: 1, jobs: None };
        assert!(run_monte_carlo(&spec, &["OR1".to_string()], opts).is_err());
        assert!(run_monte_carlo(&spec, &all(CaseId::Cs5), MonteCarloOptions { runs: 1, ..opts }).is_err());
    }

    #[test]
    fn too_many_failures_abort() {
        let col: Vec<Option<f64>> = (0..20).map(|i| if i < 2 { None } else { Some(i as f64) }).collect();
        assert!(matches!(
            summarize("X", &col, 0.0),
            Err(CausalError::TooManyFailedRuns { failed: 2, total: 20, .. })
        ));
        let col: Vec<Option<f64>> = (0..20).map(|i| if i < 1 { None } else { Some(1.0) }).collect();
        let s = summarize("X", &col, 0.0).unwrap();
        assert_eq!(s.failed, 1);
        assert_eq!(s.emp_var, 0.0);
    }

    #[test]
    fn csv_shapes() {
        let spec = DgpSpec::new(CaseId::Cs6, 100).unwrap();
        let rep = run_monte_carlo(&spec, &all(CaseId::Cs6), MonteCarloOptions { runs: 2, seed: 3, jobs: None }).unwrap();
        let csv = rep.to_csv();
        assert!(csv.starts_with("method,av_est,emp_var,mse\n"));
        assert_eq!(csv.lines().count(), 4);
        let runs = rep.runs_csv();
        assert!(runs.starts_with("run,RDD1,RDD2,RDD3\n"));
        assert_eq!(runs.lines().count(), 3);
    }
}
