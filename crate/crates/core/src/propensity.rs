//! Assignment models: propensity scores, generalized propensity scores,
//! overlap trimming and covariate balance checks.

use serde::Serialize;

use crate::data::{ObservationalDataset, TreatmentKind};
use crate::error::{CausalError, Result};
use crate::regress::{self, LinearFit, DEFAULT_MAX_ITER, DEFAULT_TOL};

/// Default overlap bounds.
pub const DEFAULT_TRIM: (f64, f64) = (0.01, 0.99);
const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PropensityKind {
    /// Logistic model for `P(D = 1 | x)`.
    BinaryLogistic,
    /// One-vs-rest logistic models per declared level, renormalised across levels.
    MultiLogistic,
    /// Homoscedastic normal model for the conditional density of a continuous dose.
    GpsNormal,
}

/// A fitted assignment model with its per-unit scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityFit {
    pub kind: PropensityKind,
    /// Binary: `P(D = 1 | x_i)`. Multivalued: `P(D = d_i | x_i)`. Continuous:
    /// conditional density at the received dose.
    pub scores: Vec<f64>,
    /// Assignment model; absent for externally supplied scores.
    pub model: Option<LinearFit>,
    /// Residual scale of the normal dose model.
    pub sigma: Option<f64>,
    pub trim_bounds: (f64, f64),
    /// Units removed by trimming so far.
    pub dropped: usize,
    fitted_mean: Vec<f64>,
    levels: Vec<f64>,
    level_probs: Vec<Vec<f64>>,
}

impl PropensityFit {
    /// Wraps externally supplied binary scores `P(D = 1 | x_i)`.
    pub fn from_scores(scores: Vec<f64>) -> Result<Self> {
        if scores.iter().any(|&s| !(0.0..=1.0).contains(&s)) {
            return Err(CausalError::InvalidArgument(
                "propensity scores must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            kind: PropensityKind::BinaryLogistic,
            scores,
            model: None,
            sigma: None,
            trim_bounds: (0.0, 1.0),
            dropped: 0,
            fitted_mean: Vec::new(),
            levels: Vec::new(),
            level_probs: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.scores.len()
    }

    /// `pi(dose | x_i)`: a probability for binary and multivalued treatments,
    /// a density for continuous ones.
    pub fn score_at(&self, i: usize, dose: f64) -> Result<f64> {
        match self.kind {
            PropensityKind::BinaryLogistic => {
                if dose == 1.0 {
                    Ok(self.scores[i])
                } else if dose == 0.0 {
                    Ok(1.0 - self.scores[i])
                } else {
                    Err(CausalError::InvalidArgument(format!(
                        "dose {dose} is not a binary level"
                    )))
                }
            }
            PropensityKind::MultiLogistic => {
                let k = self.levels.iter().position(|&l| l == dose).ok_or_else(|| {
                    CausalError::InvalidArgument(format!("dose {dose} is not a declared level"))
                })?;
                Ok(self.level_probs[k][i])
            }
            PropensityKind::GpsNormal => {
                let sigma = self.sigma.unwrap_or(1.0);
                Ok(normal_density(dose, self.fitted_mean[i], sigma))
            }
        }
    }

    fn select(&self, keep: &[usize]) -> Self {
        let pick = |v: &Vec<f64>| -> Vec<f64> {
            if v.is_empty() {
                Vec::new()
            } else {
                keep.iter().map(|&i| v[i]).collect()
            }
        };
        Self {
            kind: self.kind,
            scores: pick(&self.scores),
            model: self.model.clone(),
            sigma: self.sigma,
            trim_bounds: self.trim_bounds,
            dropped: self.dropped + (self.scores.len() - keep.len()),
            fitted_mean: pick(&self.fitted_mean),
            levels: self.levels.clone(),
            level_probs: self.level_probs.iter().map(pick).collect(),
        }
    }
}

fn normal_density(v: f64, mean: f64, sigma: f64) -> f64 {
    let z = (v - mean) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Logistic propensity model of `d` on `(1, x)`.
pub fn estimate_propensity_binary(ds: &ObservationalDataset) -> Result<PropensityFit> {
    ds.require_binary()?;
    let design = regress::with_intercept(ds.x());
    let fit = regress::fit_logistic(&design, ds.d(), DEFAULT_MAX_ITER, DEFAULT_TOL)?;
    let scores = regress::predict(&fit, &design)?;
    Ok(PropensityFit {
        kind: PropensityKind::BinaryLogistic,
        scores,
        model: Some(fit),
        sigma: None,
        trim_bounds: (0.0, 1.0),
        dropped: 0,
        fitted_mean: Vec::new(),
        levels: Vec::new(),
        level_probs: Vec::new(),
    })
}

/// One-vs-rest logistic models for every declared level, normalised so the
/// level probabilities of each unit sum to one.
pub fn estimate_propensity_multivalued(ds: &ObservationalDataset) -> Result<PropensityFit> {
    let levels = match ds.treatment_kind() {
        TreatmentKind::Multivalued(levels) => levels.clone(),
        _ => {
            return Err(CausalError::InvalidArgument(
                "multivalued propensity model requires declared levels".into(),
            ))
        }
    };
    let design = regress::with_intercept(ds.x());
    let n = ds.n();
    let mut raw = Vec::with_capacity(levels.len());
    let mut first_model = None;
    for &level in &levels {
        let indicator: Vec<f64> = ds.d().iter().map(|&d| (d == level) as u8 as f64).collect();
        let fit = regress::fit_logistic(&design, &indicator, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
        raw.push(regress::predict(&fit, &design)?);
        if first_model.is_none() {
            first_model = Some(fit);
        }
    }
    for i in 0..n {
        let total: f64 = raw.iter().map(|p| p[i]).sum();
        for p in raw.iter_mut() {
            p[i] /= total;
        }
    }
    let scores = (0..n)
        .map(|i| {
            let k = levels.iter().position(|&l| l == ds.d()[i]).unwrap_or(0);
            raw[k][i]
        })
        .collect();
    Ok(PropensityFit {
        kind: PropensityKind::MultiLogistic,
        scores,
        model: first_model,
        sigma: None,
        trim_bounds: (0.0, 1.0),
        dropped: 0,
        fitted_mean: Vec::new(),
        levels,
        level_probs: raw,
    })
}

/// Normal generalized propensity score: OLS of `d` on `(1, x)`, residual
/// standard deviation as scale, density of each received dose as score.
pub fn estimate_gps_normal(ds: &ObservationalDataset) -> Result<PropensityFit> {
    if !matches!(ds.treatment_kind(), TreatmentKind::Continuous) {
        return Err(CausalError::InvalidArgument(
            "generalized propensity score requires a continuous treatment".into(),
        ));
    }
    let design = regress::with_intercept(ds.x());
    let fit = regress::fit_ols(&design, ds.d(), None)?;
    let sigma = fit.sigma2.sqrt();
    if !(sigma >= SIGMA_FLOOR) {
        return Err(CausalError::SigmaFloor { sigma });
    }
    let fitted_mean = regress::predict(&fit, &design)?;
    let scores = ds
        .d()
        .iter()
        .zip(&fitted_mean)
        .map(|(&d, &m)| normal_density(d, m, sigma))
        .collect();
    Ok(PropensityFit {
        kind: PropensityKind::GpsNormal,
        scores,
        model: Some(fit),
        sigma: Some(sigma),
        trim_bounds: (0.0, f64::INFINITY),
        dropped: 0,
        fitted_mean,
        levels: Vec::new(),
        level_probs: Vec::new(),
    })
}

/// Keeps units whose binary score lies in `[lo, hi]`. Returns the trimmed fit
/// and the kept row indices (into the fit's current rows).
pub fn trim_overlap(fit: &PropensityFit, lo: f64, hi: f64) -> Result<(PropensityFit, Vec<usize>)> {
    if fit.kind != PropensityKind::BinaryLogistic {
        return Err(CausalError::InvalidArgument(
            "overlap trimming applies to binary propensity scores".into(),
        ));
    }
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(CausalError::InvalidArgument(format!(
            "trim bounds must satisfy 0 <= lo < hi <= 1, got ({lo}, {hi})"
        )));
    }
    let keep: Vec<usize> = fit
        .scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= lo && s <= hi)
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(CausalError::AllUnitsTrimmed);
    }
    let mut trimmed = fit.select(&keep);
    trimmed.trim_bounds = (lo, hi);
    Ok((trimmed, keep))
}

/// Assigns each unit to one of `n_strata` equal-count strata of the score,
/// using a stable sort so tied scores keep row order.
pub fn quantile_strata(scores: &[f64], n_strata: usize) -> Vec<usize> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut stratum = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        stratum[i] = rank * n_strata / n;
    }
    stratum
}

/// Balance of one covariate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovariateBalance {
    pub covariate: usize,
    pub overall_smd: f64,
    /// Size-weighted average over strata containing both arms.
    pub stratified_smd: Option<f64>,
    /// Per-stratum SMD; `None` where a stratum lacks an arm.
    pub per_stratum: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceTable {
    pub covariates: Vec<CovariateBalance>,
    pub n_strata: usize,
    /// Strata that lack treated or control units.
    pub undefined_strata: Vec<usize>,
}

fn mean_var(values: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    let v: Vec<f64> = values.collect();
    let n = v.len();
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    (mean, var, n)
}

/// Standardized mean differences of every covariate, overall and within
/// propensity-score quantile strata. Every difference is scaled by the
/// overall pooled standard deviation; a constant covariate has SMD 0.
pub fn balance_diagnostic(
    ds: &ObservationalDataset,
    fit: &PropensityFit,
    n_strata: usize,
) -> Result<BalanceTable> {
    ds.require_binary()?;
    if n_strata < 2 {
        return Err(CausalError::InvalidArgument("need at least two strata".into()));
    }
    if fit.n() != ds.n() {
        return Err(CausalError::DimensionMismatch(format!(
            "{} scores for {} rows",
            fit.n(),
            ds.n()
        )));
    }
    let strata = quantile_strata(&fit.scores, n_strata);
    let d = ds.d();
    let x = ds.x();
    let n = ds.n();

    let mut arm_counts = vec![(0usize, 0usize); n_strata];
    for i in 0..n {
        if d[i] == 1.0 {
            arm_counts[strata[i]].1 += 1;
        } else {
            arm_counts[strata[i]].0 += 1;
        }
    }
    let undefined: Vec<usize> = (0..n_strata)
        .filter(|&j| arm_counts[j].0 == 0 || arm_counts[j].1 == 0)
        .collect();

    let mut covariates = Vec::with_capacity(x.ncols());
    for c in 0..x.ncols() {
        let (mt, vt, _) = mean_var((0..n).filter(|&i| d[i] == 1.0).map(|i| x[(i, c)]));
        let (mc, vc, _) = mean_var((0..n).filter(|&i| d[i] != 1.0).map(|i| x[(i, c)]));
        let pooled = ((vt + vc) / 2.0).sqrt();
        let smd = |diff: f64| if pooled > 0.0 { diff.abs() / pooled } else { 0.0 };
        let overall_smd = smd(mt - mc);

        let mut per_stratum = Vec::with_capacity(n_strata);
        let (mut acc, mut weight) = (0.0, 0usize);
        for j in 0..n_strata {
            if undefined.contains(&j) {
                per_stratum.push(None);
                continue;
            }
            let in_j = |i: &usize| strata[*i] == j;
            let (mt_j, _, nt) = mean_var((0..n).filter(in_j).filter(|&i| d[i] == 1.0).map(|i| x[(i, c)]));
            let (mc_j, _, nc) = mean_var((0..n).filter(in_j).filter(|&i| d[i] != 1.0).map(|i| x[(i, c)]));
            let s = smd(mt_j - mc_j);
            per_stratum.push(Some(s));
            acc += s * (nt + nc) as f64;
            weight += nt + nc;
        }
        covariates.push(CovariateBalance {
            covariate: c,
            overall_smd,
            stratified_smd: (weight > 0).then(|| acc / weight as f64),
            per_stratum,
        });
    }
    Ok(BalanceTable {
        covariates,
        n_strata,
        undefined_strata: undefined,
    })
}
