//! Nonparametric bootstrap and delta-method variances.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CausalEstimate, ObservationalDataset, PanelDataset};
use crate::error::{CausalError, Result};
use crate::quasi::DidDataset;
use crate::regress::{self, LinearFit, Link};
use crate::simulate::rng::stream;

/// Replicates may fail (e.g. a resample with an empty arm); at most this
/// share is tolerated.
pub const MAX_FAILED_SHARE: f64 = 0.10;

/// Data that can be resampled with replacement at the level of its
/// independent units.
pub trait Resample: Sized {
    /// Number of independent resampling units.
    fn resampling_units(&self) -> usize;
    /// Dataset built from the given units (repeats allowed).
    fn resample(&self, units: &[usize]) -> Self;
}

impl Resample for ObservationalDataset {
    fn resampling_units(&self) -> usize {
        self.n()
    }

    fn resample(&self, units: &[usize]) -> Self {
        self.select_rows(units)
    }
}

/// Whole units are resampled so that within-unit dependence is preserved.
impl Resample for PanelDataset {
    fn resampling_units(&self) -> usize {
        self.n_units()
    }

    fn resample(&self, units: &[usize]) -> Self {
        self.select_units(units)
    }
}

impl Resample for DidDataset {
    fn resampling_units(&self) -> usize {
        self.n()
    }

    fn resample(&self, units: &[usize]) -> Self {
        let pick_f = |v: &[f64]| units.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        let pick_i = |v: &[i64]| units.iter().map(|&i| v[i]).collect::<Vec<i64>>();
        let mut out = DidDataset::new(pick_f(self.y()), pick_i(self.group()), pick_i(self.period()))
            .expect("resampled rows keep the validated shape");
        if let Some(x) = self.x() {
            let xs = DMatrix::from_fn(units.len(), x.ncols(), |i, j| x[(units[i], j)]);
            out = out.with_covariates(xs).expect("resampled rows keep the validated shape");
        }
        if let Some(t) = self.treatment() {
            out = out.with_treatment(pick_f(t)).expect("resampled rows keep the validated shape");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Sample variance of the successful replicates (divisor `B' - 1`).
    pub variance: f64,
    /// 2.5% and 97.5% percentiles of the replicates.
    pub ci: (f64, f64),
    pub replicates: Vec<f64>,
    pub failed: usize,
    pub requested: usize,
}

impl BootstrapResult {
    /// Copy variance and percentile interval onto an estimate.
    pub fn apply(&self, mut est: CausalEstimate) -> CausalEstimate {
        est.variance = Some(self.variance);
        est.ci = Some(self.ci);
        est.with_diagnostic("bootstrap_replicates", self.replicates.len() as f64)
            .with_diagnostic("bootstrap_failed", self.failed as f64)
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Bootstrap the full estimator: `b` resamples with replacement, each drawn
/// from a stream keyed by `(seed, replicate)`, so results do not depend on
/// how replicates are scheduled across threads.
pub fn bootstrap_variance<D, F>(estimator: F, data: &D, b: usize, seed: u64) -> Result<BootstrapResult>
where
    D: Resample + Sync,
    F: Fn(&D) -> Result<f64> + Sync,
{
    if b < 2 {
        return Err(CausalError::InvalidArgument(
            "bootstrap needs at least two replicates".into(),
        ));
    }
    estimator(data)?;
    let n = data.resampling_units();
    let draws: Vec<Option<f64>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream(&[seed, 0xB007, rep as u64]);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            estimator(&data.resample(&idx)).ok().filter(|v| v.is_finite())
        })
        .collect();
    let replicates: Vec<f64> = draws.iter().flatten().copied().collect();
    let failed = b - replicates.len();
    if failed as f64 >= MAX_FAILED_SHARE * b as f64 || replicates.len() < 2 {
        return Err(CausalError::TooManyFailedReplicates { failed, total: b });
    }
    let m = replicates.len() as f64;
    let mean = replicates.iter().sum::<f64>() / m;
    let variance = replicates.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let mut sorted = replicates.clone();
    sorted.sort_by(f64::total_cmp);
    let ci = (quantile_sorted(&sorted, 0.025), quantile_sorted(&sorted, 0.975));
    Ok(BootstrapResult {
        variance,
        ci,
        replicates,
        failed,
        requested: b,
    })
}

/// Separate outcome regressions for treated and control units on `(1, x[cols])`.
#[derive(Debug, Clone)]
pub struct ArmModels {
    pub treated: LinearFit,
    pub control: LinearFit,
    pub columns: Vec<usize>,
}

impl ArmModels {
    pub fn fit(ds: &ObservationalDataset, covariates: Option<Vec<usize>>) -> Result<Self> {
        ds.require_binary()?;
        let columns = covariates.unwrap_or_else(|| (0..ds.n_covariates()).collect());
        if let Some(&bad) = columns.iter().find(|&&c| c >= ds.n_covariates()) {
            return Err(CausalError::InvalidArgument(format!("covariate column {bad} does not exist")));
        }
        let arm = |value: f64| -> Result<LinearFit> {
            let rows: Vec<usize> = (0..ds.n()).filter(|&i| ds.d()[i] == value).collect();
            let design = DMatrix::from_fn(rows.len(), columns.len() + 1, |i, j| {
                if j == 0 { 1.0 } else { ds.x()[(rows[i], columns[j - 1])] }
            });
            let y: Vec<f64> = rows.iter().map(|&i| ds.y()[i]).collect();
            regress::fit_ols(&design, &y, None)
        };
        Ok(Self {
            treated: arm(1.0)?,
            control: arm(0.0)?,
            columns,
        })
    }

    fn row(&self, ds: &ObservationalDataset, i: usize) -> Vec<f64> {
        std::iter::once(1.0)
            .chain(self.columns.iter().map(|&c| ds.x()[(i, c)]))
            .collect()
    }

    /// Per-unit predicted contrasts `m1(x_i) - m0(x_i)`.
    pub fn contrasts(&self, ds: &ObservationalDataset) -> Vec<f64> {
        (0..ds.n())
            .map(|i| {
                let r = self.row(ds, i);
                regress::predict_row(&self.treated, &r) - regress::predict_row(&self.control, &r)
            })
            .collect()
    }

    /// Sample-average gradients of the arm predictions with respect to each
    /// arm's coefficients: `(treated, control)`.
    pub fn mean_gradients(&self, ds: &ObservationalDataset) -> (Vec<f64>, Vec<f64>) {
        let k = self.columns.len() + 1;
        let (mut g1, mut g0) = (vec![0.0; k], vec![0.0; k]);
        for i in 0..ds.n() {
            let r = self.row(ds, i);
            for (a, g) in g1.iter_mut().zip(regress::prediction_gradient(&self.treated, &r)) {
                *a += g;
            }
            for (a, g) in g0.iter_mut().zip(regress::prediction_gradient(&self.control, &r)) {
                *a += g;
            }
        }
        let n = ds.n() as f64;
        g1.iter_mut().chain(g0.iter_mut()).for_each(|v| *v /= n);
        (g1, g0)
    }
}

fn quad(g: &[f64], cov: &DMatrix<f64>) -> f64 {
    let mut s = 0.0;
    for a in 0..g.len() {
        for b in 0..g.len() {
            s += g[a] * cov[(a, b)] * g[b];
        }
    }
    s
}

/// Delta-method variance of the outcome-regression ATE built from separate
/// arm models: spread of the predicted contrasts over the sample plus the
/// coefficient uncertainty of each arm propagated through the average gradient.
pub fn delta_variance_or(ds: &ObservationalDataset, arms: &ArmModels) -> Result<f64> {
    for fit in [&arms.treated, &arms.control] {
        if fit.link != Link::Identity {
            return Err(CausalError::InvalidArgument(
                "delta-method variance expects identity-link arm models".into(),
            ));
        }
    }
    let v1 = arms.treated.coef_cov.as_ref().ok_or(CausalError::MissingCoefCovariance)?;
    let v0 = arms.control.coef_cov.as_ref().ok_or(CausalError::MissingCoefCovariance)?;
    let c = arms.contrasts(ds);
    let n = ds.n() as f64;
    let tau = c.iter().sum::<f64>() / n;
    let spread = c.iter().map(|v| (v - tau).powi(2)).sum::<f64>() / n;
    let (g1, g0) = arms.mean_gradients(ds);
    Ok(spread / n + quad(&g1, v1) + quad(&g0, v0))
}

/// Outcome-regression ATE from separate arm models with its delta-method variance.
pub fn ate_or_arms(ds: &ObservationalDataset, covariates: Option<Vec<usize>>) -> Result<CausalEstimate> {
    let arms = ArmModels::fit(ds, covariates)?;
    let c = arms.contrasts(ds);
    let point = c.iter().sum::<f64>() / ds.n() as f64;
    let var = delta_variance_or(ds, &arms)?;
    Ok(CausalEstimate::ate("or_arms", 1.0, 0.0, point, ds.n()).with_variance(var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{validate, RawColumns};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn mean_of(ds: &ObservationalDataset) -> Result<f64> {
        Ok(ds.y().iter().sum::<f64>() / ds.n() as f64)
    }

    fn sample(n: usize, seed: u64) -> ObservationalDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let d: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        validate(RawColumns::new(y, d, DMatrix::zeros(n, 0))).unwrap()
    }

    #[test]
    fn rejects_single_replicate() {
        assert!(matches!(
            bootstrap_variance(mean_of, &sample(20, 1), 1, 7),
            Err(CausalError::InvalidArgument(_))
        ));
    }

    #[test]
    fn constant_outcome_has_zero_variance() {
        let ds = validate(RawColumns::new(vec![3.0; 10], vec![0.0, 1.0].repeat(5), DMatrix::zeros(10, 0))).unwrap();
        let res = bootstrap_variance(mean_of, &ds, 50, 7).unwrap();
        assert_eq!(res.variance, 0.0);
        assert_eq!(res.ci, (3.0, 3.0));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let ds = sample(50, 2);
        let a = bootstrap_variance(mean_of, &ds, 100, 11).unwrap();
        let b = bootstrap_variance(mean_of, &ds, 100, 11).unwrap();
        assert_eq!(a, b);
        let c = bootstrap_variance(mean_of, &ds, 100, 12).unwrap();
        assert_ne!(a.replicates, c.replicates);
    }

    #[test]
    fn failing_replicates_are_counted() {
        let ds = sample(30, 3);
        let flaky = |d: &ObservationalDataset| -> Result<f64> {
            if d.y()[0] > 1.5 { Err(CausalError::NoUsableStratum) } else { mean_of(d) }
        };
        match bootstrap_variance(flaky, &ds, 200, 5) {
            Ok(res) => assert!(res.failed < 20),
            Err(e) => assert!(matches!(e, CausalError::TooManyFailedReplicates { total: 200, .. })),
        }
        let always = |_: &ObservationalDataset| -> Result<f64> { Ok(f64::NAN) };
        assert!(bootstrap_variance(always, &ds, 20, 5).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.0);
        assert!((quantile_sorted(&v, 0.025) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn noiseless_delta_variance_vanishes() {
        let n = 200;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(n, 1, |_, _| StandardNormal.sample(&mut rng));
        let d: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        // constant effect, no noise: the predicted contrast is the same for every unit
        let y: Vec<f64> = (0..n).map(|i| 1.0 + 2.0 * d[i] + 0.5 * x[(i, 0)]).collect();
        let ds = validate(RawColumns::new(y, d, x)).unwrap();
        let est = ate_or_arms(&ds, None).unwrap();
        assert!((est.point - 2.0).abs() < 1e-10);
        assert!(est.variance.unwrap() < 1e-20);
    }

    #[test]
    fn arm_gradients_match_finite_differences() {
        let n = 120;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = DMatrix::from_fn(n, 2, |_, _| StandardNormal.sample(&mut rng));
        let d: Vec<f64> = (0..n).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| d[i] + x[(i, 0)] - x[(i, 1)] + { let e: f64 = StandardNormal.sample(&mut rng); e })
            .collect();
        let ds = validate(RawColumns::new(y, d, x)).unwrap();
        let arms = ArmModels::fit(&ds, None).unwrap();
        let (g1, g0) = arms.mean_gradients(&ds);
        let tau = |a: &ArmModels| a.contrasts(&ds).iter().sum::<f64>() / n as f64;
        let h = 1e-6;
        for k in 0..3 {
            let mut up = arms.clone();
            let mut dn = arms.clone();
            up.treated.coef[k] += h;
            dn.treated.coef[k] -= h;
            assert!(((tau(&up) - tau(&dn)) / (2.0 * h) - g1[k]).abs() < 1e-5);
            let mut up = arms.clone();
            let mut dn = arms.clone();
            up.control.coef[k] += h;
            dn.control.coef[k] -= h;
            assert!(((tau(&up) - tau(&dn)) / (2.0 * h) + g0[k]).abs() < 1e-5);
        }
    }
}
