//! Cross-sectional estimators under strong ignorability: outcome regression,
//! inverse propensity weighting, regression on the propensity score,
//! stratification, matching and the doubly robust augmented estimator.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{CausalEstimate, ObservationalDataset, TreatmentKind};
use crate::error::{CausalError, Result};
use crate::propensity::{quantile_strata, PropensityFit, PropensityKind};
use crate::regress::{self, LinearFit, Link, DEFAULT_MAX_ITER, DEFAULT_TOL};

/// Scores below this are treated as zero before any division.
pub const PROPENSITY_FLOOR: f64 = 1e-12;

/// Outcome-model specification: `y ~ 1 + d + x[selected] (+ d:x[selected])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrSpec {
    /// Covariate columns to include; `None` uses every column.
    pub covariates: Option<Vec<usize>>,
    pub interactions_with_d: bool,
    pub link: Link,
}

impl Default for OrSpec {
    fn default() -> Self {
        Self {
            covariates: None,
            interactions_with_d: false,
            link: Link::Identity,
        }
    }
}

impl OrSpec {
    /// Treatment-only model (every covariate omitted).
    pub fn treatment_only() -> Self {
        Self {
            covariates: Some(Vec::new()),
            ..Self::default()
        }
    }

    pub fn with_covariates(columns: Vec<usize>) -> Self {
        Self {
            covariates: Some(columns),
            ..Self::default()
        }
    }

    fn columns(&self, ds: &ObservationalDataset) -> Result<Vec<usize>> {
        let p = ds.n_covariates();
        match &self.covariates {
            None => Ok((0..p).collect()),
            Some(cols) => {
                if let Some(&bad) = cols.iter().find(|&&c| c >= p) {
                    return Err(CausalError::InvalidArgument(format!(
                        "covariate column {bad} does not exist (dataset has {p})"
                    )));
                }
                Ok(cols.clone())
            }
        }
    }

    fn row(&self, cols: &[usize], x: &DMatrix<f64>, i: usize, dose: f64, out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        out.push(dose);
        out.extend(cols.iter().map(|&c| x[(i, c)]));
        if self.interactions_with_d {
            out.extend(cols.iter().map(|&c| dose * x[(i, c)]));
        }
    }

    /// Design with the treatment column set to `dose`, or to the observed
    /// treatment when `dose` is `None`.
    fn design(&self, ds: &ObservationalDataset, cols: &[usize], dose: Option<f64>) -> DMatrix<f64> {
        let width = 2 + cols.len() * if self.interactions_with_d { 2 } else { 1 };
        let mut m = DMatrix::zeros(ds.n(), width);
        let mut row = Vec::with_capacity(width);
        for i in 0..ds.n() {
            self.row(cols, ds.x(), i, dose.unwrap_or(ds.d()[i]), &mut row);
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }
}

/// Fitted outcome model plus the pieces needed to predict at fixed doses.
#[derive(Debug, Clone)]
pub struct OutcomeModel {
    pub spec: OrSpec,
    pub fit: LinearFit,
    columns: Vec<usize>,
}

impl OutcomeModel {
    pub fn fit(ds: &ObservationalDataset, spec: &OrSpec) -> Result<Self> {
        let columns = spec.columns(ds)?;
        let design = spec.design(ds, &columns, None);
        let fit = match spec.link {
            Link::Identity => regress::fit_ols(&design, ds.y(), None)?,
            Link::Logit => regress::fit_logistic(&design, ds.y(), DEFAULT_MAX_ITER, DEFAULT_TOL)?,
        };
        Ok(Self {
            spec: spec.clone(),
            fit,
            columns,
        })
    }

    /// `m(dose, x_i)` for every row of `ds`.
    pub fn predict_at(&self, ds: &ObservationalDataset, dose: f64) -> Result<Vec<f64>> {
        let design = self.spec.design(ds, &self.columns, Some(dose));
        regress::predict(&self.fit, &design)
    }

    /// Sample mean of the prediction gradients at `dose`.
    fn mean_gradient(&self, ds: &ObservationalDataset, dose: f64) -> Vec<f64> {
        let mut row = Vec::new();
        let mut acc = vec![0.0; self.fit.design_width];
        for i in 0..ds.n() {
            self.spec.row(&self.columns, ds.x(), i, dose, &mut row);
            for (a, g) in acc.iter_mut().zip(regress::prediction_gradient(&self.fit, &row)) {
                *a += g;
            }
        }
        acc.iter_mut().for_each(|a| *a /= ds.n() as f64);
        acc
    }
}

fn quad_form(g: &[f64], cov: &DMatrix<f64>) -> f64 {
    let mut s = 0.0;
    for a in 0..g.len() {
        for b in 0..g.len() {
            s += g[a] * cov[(a, b)] * g[b];
        }
    }
    s
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Average potential outcome from the outcome model: mean prediction with
/// the treatment held at `dose`.
pub fn apo_or(ds: &ObservationalDataset, spec: &OrSpec, dose: f64) -> Result<CausalEstimate> {
    let model = OutcomeModel::fit(ds, spec)?;
    let preds = model.predict_at(ds, dose)?;
    let point = mean(&preds);
    let mut est = CausalEstimate::apo("or", dose, point, ds.n());
    if let Some(cov) = &model.fit.coef_cov {
        let spread = preds.iter().map(|p| (p - point).powi(2)).sum::<f64>() / ds.n() as f64;
        let g = model.mean_gradient(ds, dose);
        est = est.with_variance(spread / ds.n() as f64 + quad_form(&g, cov));
    }
    Ok(est)
}

/// Outcome-regression ATE `mean(m(dose, x) - m(reference, x))` with a delta-method variance.
pub fn ate_or(
    ds: &ObservationalDataset,
    spec: &OrSpec,
    dose: f64,
    reference: f64,
) -> Result<CausalEstimate> {
    let model = OutcomeModel::fit(ds, spec)?;
    ate_or_with_model(ds, &model, dose, reference)
}

pub(crate) fn ate_or_with_model(
    ds: &ObservationalDataset,
    model: &OutcomeModel,
    dose: f64,
    reference: f64,
) -> Result<CausalEstimate> {
    let m1 = model.predict_at(ds, dose)?;
    let m0 = model.predict_at(ds, reference)?;
    let contrast: Vec<f64> = m1.iter().zip(&m0).map(|(a, b)| a - b).collect();
    let point = mean(&contrast);
    let mut est = CausalEstimate::ate("or", dose, reference, point, ds.n());
    if let Some(cov) = &model.fit.coef_cov {
        let spread = contrast.iter().map(|c| (c - point).powi(2)).sum::<f64>() / ds.n() as f64;
        let g1 = model.mean_gradient(ds, dose);
        let g0 = model.mean_gradient(ds, reference);
        let g: Vec<f64> = g1.iter().zip(&g0).map(|(a, b)| a - b).collect();
        est = est.with_variance(spread / ds.n() as f64 + quad_form(&g, cov));
    }
    Ok(est)
}

fn require_indicator_ipw(ds: &ObservationalDataset, ps: &PropensityFit) -> Result<()> {
    match (ds.treatment_kind(), ps.kind) {
        (TreatmentKind::Binary, PropensityKind::BinaryLogistic)
        | (TreatmentKind::Multivalued(_), PropensityKind::MultiLogistic) => {}
        (TreatmentKind::Continuous, _) => {
            return Err(CausalError::InvalidArgument(
                "indicator-weighted IPW needs a binary or multivalued treatment; \
                 use the outcome-regression or doubly robust estimators for continuous doses"
                    .into(),
            ))
        }
        _ => {
            return Err(CausalError::InvalidArgument(
                "propensity model does not match the treatment coding".into(),
            ))
        }
    }
    if ps.n() != ds.n() {
        return Err(CausalError::DimensionMismatch(format!(
            "{} propensity scores for {} rows",
            ps.n(),
            ds.n()
        )));
    }
    Ok(())
}

fn floored(score: f64, row: usize) -> Result<f64> {
    if !(score >= PROPENSITY_FLOOR) {
        return Err(CausalError::ZeroPropensity { row, score });
    }
    Ok(score)
}

/// Horvitz–Thompson average potential outcome `(1/n) sum 1[d_i = dose] y_i / pi(dose | x_i)`.
pub fn apo_ipw(ds: &ObservationalDataset, ps: &PropensityFit, dose: f64) -> Result<CausalEstimate> {
    require_indicator_ipw(ds, ps)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..ds.n() {
        if ds.d()[i] == dose {
            total += ds.y()[i] / floored(ps.score_at(i, dose)?, i)?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(CausalError::EmptyDoseGroup { dose });
    }
    Ok(CausalEstimate::apo("ipw", dose, total / ds.n() as f64, ds.n())
        .with_diagnostic("n_at_dose", count as f64))
}

/// IPW contrast of `dose` against units not at `dose`, weighting the
/// complement by `1 - pi(dose | x_i)`. For binary treatments with
/// `(dose, reference) = (1, 0)` this is the usual two-arm weighting.
pub fn ate_ipw(
    ds: &ObservationalDataset,
    ps: &PropensityFit,
    dose: f64,
    reference: f64,
) -> Result<CausalEstimate> {
    require_indicator_ipw(ds, ps)?;
    if ds.is_binary() && (dose, reference) != (1.0, 0.0) && (dose, reference) != (0.0, 1.0) {
        return Err(CausalError::InvalidArgument(
            "binary IPW contrasts doses 1 and 0".into(),
        ));
    }
    let (mut total, mut n_at, mut n_rest) = (0.0, 0usize, 0usize);
    for i in 0..ds.n() {
        let p = ps.score_at(i, dose)?;
        if ds.d()[i] == dose {
            total += ds.y()[i] / floored(p, i)?;
            n_at += 1;
        } else {
            total -= ds.y()[i] / floored(1.0 - p, i)?;
            n_rest += 1;
        }
    }
    if n_at == 0 {
        return Err(CausalError::EmptyDoseGroup { dose });
    }
    if n_rest == 0 {
        return Err(CausalError::EmptyDoseGroup { dose: reference });
    }
    Ok(
        CausalEstimate::ate("ipw", dose, reference, total / ds.n() as f64, ds.n())
            .with_diagnostic("n_at_dose", n_at as f64)
            .with_diagnostic("n_reference", n_rest as f64)
            .with_diagnostic("trimmed_units", ps.dropped as f64),
    )
}

/// Regression of the outcome on `(1, d, score^1..score^k, d*score^1..d*score^k)`,
/// averaging predicted contrasts between `dose` and `reference`.
pub fn ate_psr(
    ds: &ObservationalDataset,
    ps: &PropensityFit,
    dose: f64,
    reference: f64,
    poly_degree: usize,
) -> Result<CausalEstimate> {
    ds.require_binary()?;
    if poly_degree < 1 {
        return Err(CausalError::InvalidArgument("polynomial degree must be >= 1".into()));
    }
    if ps.n() != ds.n() {
        return Err(CausalError::DimensionMismatch(format!(
            "{} propensity scores for {} rows",
            ps.n(),
            ds.n()
        )));
    }
    let s = &ps.scores;
    let (lo, hi) = s
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    // a constant score carries no information; the model collapses to (1, d)
    let degree = if hi - lo <= 1e-12 * hi.abs().max(1.0) { 0 } else { poly_degree };

    let width = 2 + 2 * degree;
    let build = |treat: &dyn Fn(usize) -> f64| {
        DMatrix::from_fn(ds.n(), width, |i, j| {
            let t = treat(i);
            match j {
                0 => 1.0,
                1 => t,
                _ if j < 2 + degree => s[i].powi((j - 1) as i32),
                _ => t * s[i].powi((j - 1 - degree) as i32),
            }
        })
    };
    let fit = regress::fit_ols(&build(&|i| ds.d()[i]), ds.y(), None)?;
    let m1 = regress::predict(&fit, &build(&|_| dose))?;
    let m0 = regress::predict(&fit, &build(&|_| reference))?;
    let point = m1.iter().zip(&m0).map(|(a, b)| a - b).sum::<f64>() / ds.n() as f64;
    Ok(CausalEstimate::ate("psr", dose, reference, point, ds.n())
        .with_diagnostic("degree", degree as f64))
}

/// Blocking estimator over `n_strata` propensity-score quantile strata.
pub fn ate_stratification(
    ds: &ObservationalDataset,
    ps: &PropensityFit,
    n_strata: usize,
) -> Result<CausalEstimate> {
    if n_strata < 1 {
        return Err(CausalError::InvalidArgument("need at least one stratum".into()));
    }
    if ps.n() != ds.n() {
        return Err(CausalError::DimensionMismatch(format!(
            "{} propensity scores for {} rows",
            ps.n(),
            ds.n()
        )));
    }
    let strata = quantile_strata(&ps.scores, n_strata);
    ate_stratification_with_strata(ds, &strata)
}

/// Blocking estimator for an explicit stratum assignment. Strata missing an
/// arm are excluded and the weights renormalised over the remaining units.
pub fn ate_stratification_with_strata(
    ds: &ObservationalDataset,
    strata: &[usize],
) -> Result<CausalEstimate> {
    ds.require_binary()?;
    if strata.len() != ds.n() {
        return Err(CausalError::DimensionMismatch(format!(
            "{} stratum labels for {} rows",
            strata.len(),
            ds.n()
        )));
    }
    let j_max = strata.iter().copied().max().unwrap_or(0) + 1;
    // (sum, sum of squares, count) per arm per stratum
    let mut acc = vec![[(0.0, 0.0, 0usize); 2]; j_max];
    for i in 0..ds.n() {
        let arm = (ds.d()[i] == 1.0) as usize;
        let cell = &mut acc[strata[i]][arm];
        cell.0 += ds.y()[i];
        cell.1 += ds.y()[i] * ds.y()[i];
        cell.2 += 1;
    }
    let mut effects = Vec::new();
    let mut excluded = 0usize;
    for cell in &acc {
        let [c, t] = *cell;
        if c.2 + t.2 == 0 {
            continue;
        }
        if c.2 == 0 || t.2 == 0 {
            excluded += 1;
            continue;
        }
        let mt = t.0 / t.2 as f64;
        let mc = c.0 / c.2 as f64;
        let var = |s: (f64, f64, usize), m: f64| {
            (s.2 > 1).then(|| ((s.1 - s.2 as f64 * m * m) / (s.2 - 1) as f64).max(0.0) / s.2 as f64)
        };
        let v = match (var(t, mt), var(c, mc)) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
        effects.push((mt - mc, (t.2 + c.2) as f64, v));
    }
    if effects.is_empty() {
        return Err(CausalError::NoUsableStratum);
    }
    let n_used: f64 = effects.iter().map(|e| e.1).sum();
    let point = effects.iter().map(|e| e.0 * e.1 / n_used).sum();
    let mut est = CausalEstimate::ate("stratification", 1.0, 0.0, point, n_used as usize)
        .with_diagnostic("strata_used", effects.len() as f64)
        .with_diagnostic("strata_excluded", excluded as f64);
    if effects.iter().all(|e| e.2.is_some()) {
        let var = effects
            .iter()
            .map(|e| (e.1 / n_used).powi(2) * e.2.unwrap_or(0.0))
            .sum();
        est = est.with_variance(var);
    }
    Ok(est)
}

/// Nearest-neighbour matching on the propensity score with replacement.
/// Each unit's missing potential outcome is the mean of its `m` closest
/// opposite-arm units; ties go to the lowest row index.
pub fn ate_matching(ds: &ObservationalDataset, ps: &PropensityFit, m: usize) -> Result<CausalEstimate> {
    ds.require_binary()?;
    if m == 0 {
        return Err(CausalError::InvalidArgument("need at least one match".into()));
    }
    if ps.n() != ds.n() {
        return Err(CausalError::DimensionMismatch(format!(
            "{} propensity scores for {} rows",
            ps.n(),
            ds.n()
        )));
    }
    let treated: Vec<usize> = (0..ds.n()).filter(|&i| ds.d()[i] == 1.0).collect();
    let control: Vec<usize> = (0..ds.n()).filter(|&i| ds.d()[i] != 1.0).collect();
    for arm in [&treated, &control] {
        if arm.len() < m {
            return Err(CausalError::InsufficientMatches {
                needed: m,
                available: arm.len(),
            });
        }
    }
    let s = &ps.scores;
    let y = ds.y();
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(ds.n());
    let mut total = 0.0;
    for i in 0..ds.n() {
        let pool = if ds.d()[i] == 1.0 { &control } else { &treated };
        scratch.clear();
        scratch.extend(pool.iter().map(|&j| ((s[i] - s[j]).abs(), j)));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if m < scratch.len() {
            scratch.select_nth_unstable_by(m - 1, cmp);
        }
        let imputed = scratch[..m].iter().map(|&(_, j)| y[j]).sum::<f64>() / m as f64;
        total += if ds.d()[i] == 1.0 { y[i] - imputed } else { imputed - y[i] };
    }
    Ok(CausalEstimate::ate("matching", 1.0, 0.0, total / ds.n() as f64, ds.n())
        .with_diagnostic("matches", m as f64))
}

/// Doubly robust average potential outcome
/// `(1/n) sum [ m(dose, x_i) + 1[d_i = dose] / pi(dose | x_i) * (y_i - m(dose, x_i)) ]`.
pub fn apo_dr(
    ds: &ObservationalDataset,
    or_spec: &OrSpec,
    ps: &PropensityFit,
    dose: f64,
) -> Result<CausalEstimate> {
    let model = OutcomeModel::fit(ds, or_spec)?;
    let (point, correction) = dr_mean(ds, &model, ps, dose)?;
    Ok(CausalEstimate::apo("dr", dose, point, ds.n()).with_diagnostic("correction", correction))
}

fn dr_mean(
    ds: &ObservationalDataset,
    model: &OutcomeModel,
    ps: &PropensityFit,
    dose: f64,
) -> Result<(f64, f64)> {
    if ps.n() != ds.n() {
        return Err(CausalError::DimensionMismatch(format!(
            "{} propensity scores for {} rows",
            ps.n(),
            ds.n()
        )));
    }
    let preds = model.predict_at(ds, dose)?;
    let mut correction = 0.0;
    for i in 0..ds.n() {
        if ds.d()[i] == dose {
            let p = floored(ps.score_at(i, dose)?, i)?;
            correction += (ds.y()[i] - preds[i]) / p;
        }
    }
    let n = ds.n() as f64;
    Ok((mean(&preds) + correction / n, correction / n))
}

/// Doubly robust ATE `mu_dr(dose) - mu_dr(reference)`. Consistent when either
/// the outcome model or the propensity model is correctly specified.
pub fn ate_dr(
    ds: &ObservationalDataset,
    or_spec: &OrSpec,
    ps: &PropensityFit,
    dose: f64,
    reference: f64,
) -> Result<CausalEstimate> {
    let model = OutcomeModel::fit(ds, or_spec)?;
    let (mu1, c1) = dr_mean(ds, &model, ps, dose)?;
    let (mu0, c0) = dr_mean(ds, &model, ps, reference)?;
    Ok(CausalEstimate::ate("dr", dose, reference, mu1 - mu0, ds.n())
        .with_diagnostic("correction_dose", c1)
        .with_diagnostic("correction_reference", c0)
        .with_diagnostic("trimmed_units", ps.dropped as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{difference_in_means, validate, RawColumns};
    use crate::propensity::estimate_propensity_binary;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn ds(y: &[f64], d: &[f64], x: DMatrix<f64>) -> ObservationalDataset {
        validate(RawColumns::new(y.to_vec(), d.to_vec(), x)).unwrap()
    }

    fn four_units() -> ObservationalDataset {
        ds(&[3.0, 5.0, 2.0, 4.0], &[1.0, 1.0, 0.0, 0.0], DMatrix::zeros(4, 0))
    }

    #[test]
    fn treatment_only_or_equals_difference_in_means() {
        let data = ds(
            &[3.0, 5.0, 2.0, 4.0, 9.0, 1.0],
            &[1.0, 1.0, 0.0, 0.0, 1.0, 0.0],
            DMatrix::from_column_slice(6, 1, &[0.1, 0.4, 0.3, 0.9, 0.2, 0.5]),
        );
        let or = ate_or(&data, &OrSpec::treatment_only(), 1.0, 0.0).unwrap();
        let dim = difference_in_means(&data).unwrap();
        assert!((or.point - dim.point).abs() < 1e-12);
        let a1 = apo_or(&data, &OrSpec::treatment_only(), 1.0).unwrap();
        let a0 = apo_or(&data, &OrSpec::treatment_only(), 0.0).unwrap();
        assert!((a1.point - a0.point - dim.point).abs() < 1e-12);
    }

    #[test]
    fn exact_linear_outcome() {
        let d = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = d.iter().map(|v| 3.0 + 2.0 * v).collect();
        let data = validate(RawColumns::new(y, d.to_vec(), DMatrix::zeros(5, 0))).unwrap();
        let est = apo_or(&data, &OrSpec::default(), 5.0).unwrap();
        assert!((est.point - 13.0).abs() < 1e-10);
        assert_eq!(ate_or(&data, &OrSpec::default(), 2.0, 2.0).unwrap().point, 0.0);
    }

    #[test]
    fn or_recovers_linear_effect() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 10_000;
        let x = DMatrix::from_fn(n, 1, |_, _| StandardNormal.sample(&mut rng));
        let d: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 1.0 + 2.0 * d[i] + 0.5 * x[(i, 0)] + { let e: f64 = StandardNormal.sample(&mut rng); e })
            .collect();
        let data = validate(RawColumns::new(y, d, x)).unwrap();
        let est = ate_or(&data, &OrSpec::default(), 1.0, 0.0).unwrap();
        assert!((est.point - 2.0).abs() < 0.05);
        let (lo, hi) = est.ci.unwrap();
        assert!(lo <= est.point && est.point <= hi);
    }

    #[test]
    fn ipw_hand_examples() {
        let data = four_units();
        let ps = PropensityFit::from_scores(vec![0.5; 4]).unwrap();
        assert!((apo_ipw(&data, &ps, 1.0).unwrap().point - 4.0).abs() < 1e-12);
        assert!((ate_ipw(&data, &ps, 1.0, 0.0).unwrap().point - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ipw_with_empirical_share_is_treated_mean() {
        let data = ds(&[3.0, 5.0, 7.0, 2.0], &[1.0, 1.0, 1.0, 0.0], DMatrix::zeros(4, 0));
        let ps = PropensityFit::from_scores(vec![0.75; 4]).unwrap();
        assert!((apo_ipw(&data, &ps, 1.0).unwrap().point - 5.0).abs() < 1e-12);
    }

    #[test]
    fn ipw_errors() {
        let data = ds(&[1.0, 2.0], &[0.0, 0.0], DMatrix::zeros(2, 0));
        let ps = PropensityFit::from_scores(vec![0.5; 2]).unwrap();
        assert_eq!(apo_ipw(&data, &ps, 1.0).unwrap_err(), CausalError::EmptyDoseGroup { dose: 1.0 });
        let data = four_units();
        let ps = PropensityFit::from_scores(vec![0.0, 0.5, 0.5, 0.5]).unwrap();
        assert!(matches!(apo_ipw(&data, &ps, 1.0), Err(CausalError::ZeroPropensity { row: 0, .. })));
    }

    #[test]
    fn psr_constant_score_is_difference_in_means() {
        let data = ds(
            &[3.0, 5.0, 2.0, 4.0, 8.0],
            &[1.0, 1.0, 0.0, 0.0, 1.0],
            DMatrix::zeros(5, 0),
        );
        let ps = PropensityFit::from_scores(vec![0.4; 5]).unwrap();
        let est = ate_psr(&data, &ps, 1.0, 0.0, 2).unwrap();
        let dim = difference_in_means(&data).unwrap();
        assert!((est.point - dim.point).abs() < 1e-12);
        assert_eq!(ate_psr(&data, &ps, 1.0, 1.0, 2).unwrap().point, 0.0);
    }

    #[test]
    fn stratification_hand_example() {
        // stratum 0: treated mean 5, control mean 3 (4 units)
        // stratum 1: treated mean 9, control mean 8 (6 units)
        let y = [4.0, 6.0, 2.0, 4.0, 9.0, 8.0, 10.0, 7.0, 8.0, 9.0];
        let d = [1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        let strata = [0, 0, 0, 0, 1, 1, 1, 1, 1, 1];
        let data = ds(&y, &d, DMatrix::zeros(10, 0));
        let est = ate_stratification_with_strata(&data, &strata).unwrap();
        assert!((est.point - 1.4).abs() < 1e-12);
    }

    #[test]
    fn single_stratum_equals_difference_in_means() {
        let data = ds(
            &[3.0, 5.0, 2.0, 4.0, 8.0],
            &[1.0, 1.0, 0.0, 0.0, 1.0],
            DMatrix::zeros(5, 0),
        );
        let ps = PropensityFit::from_scores(vec![0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let est = ate_stratification(&data, &ps, 1).unwrap();
        assert!((est.point - difference_in_means(&data).unwrap().point).abs() < 1e-12);
    }

    #[test]
    fn strata_without_both_arms_are_excluded() {
        let y = [1.0, 2.0, 4.0, 9.0, 3.0, 7.0];
        let d = [0.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let data = ds(&y, &d, DMatrix::zeros(6, 0));
        let est = ate_stratification_with_strata(&data, &[0, 0, 1, 1, 2, 2]).unwrap();
        assert_eq!(est.diagnostics["strata_excluded"], 2.0);
        assert!((est.point - (4.0 - 9.0)).abs() < 1e-12);
        assert_eq!(est.n_used, 2);

        let data = ds(&[1.0, 2.0], &[0.0, 1.0], DMatrix::zeros(2, 0));
        assert_eq!(
            ate_stratification_with_strata(&data, &[0, 1]).unwrap_err(),
            CausalError::NoUsableStratum
        );
    }

    #[test]
    fn matching_hand_example() {
        let data = ds(&[5.0, 4.0, 2.0, 1.0], &[1.0, 1.0, 0.0, 0.0], DMatrix::zeros(4, 0));
        let ps = PropensityFit::from_scores(vec![0.6, 0.3, 0.55, 0.25]).unwrap();
        assert!((ate_matching(&data, &ps, 1).unwrap().point - 3.0).abs() < 1e-12);
        assert_eq!(
            ate_matching(&data, &ps, 3).unwrap_err(),
            CausalError::InsufficientMatches { needed: 3, available: 2 }
        );
    }

    #[test]
    fn matching_identical_pairs_is_zero() {
        let data = ds(&[2.0, 5.0, 2.0, 5.0], &[1.0, 1.0, 0.0, 0.0], DMatrix::zeros(4, 0));
        let ps = PropensityFit::from_scores(vec![0.3, 0.7, 0.3, 0.7]).unwrap();
        assert_eq!(ate_matching(&data, &ps, 1).unwrap().point, 0.0);
    }

    #[test]
    fn matching_ties_prefer_lowest_index() {
        // control units 2 and 3 are equidistant from unit 0; unit 2 wins
        let data = ds(&[10.0, 0.0, 1.0, 100.0], &[1.0, 1.0, 0.0, 0.0], DMatrix::zeros(4, 0));
        let ps = PropensityFit::from_scores(vec![0.5, 0.9, 0.4, 0.6]).unwrap();
        let est = ate_matching(&data, &ps, 1).unwrap();
        // unit0: 10-1, unit1 (0.9): nearest control 0.6 -> 0-100,
        // unit2 (0.4): nearest treated 0.5 -> 10-1, unit3 (0.6): nearest treated 0.5 -> 10-100
        let expected = (9.0 - 100.0 + 9.0 - 90.0) / 4.0;
        assert!((est.point - expected).abs() < 1e-12);
    }

    #[test]
    fn dr_with_exact_outcome_model_ignores_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 500;
        let x = DMatrix::from_fn(n, 1, |_, _| StandardNormal.sample(&mut rng));
        let d: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
        let y: Vec<f64> = (0..n).map(|i| 1.0 - 3.0 * d[i] + 2.0 * x[(i, 0)]).collect();
        let data = validate(RawColumns::new(y, d, x)).unwrap();
        let ps = PropensityFit::from_scores((0..n).map(|_| rng.random_range(0.2..0.8)).collect()).unwrap();
        let est = ate_dr(&data, &OrSpec::default(), &ps, 1.0, 0.0).unwrap();
        assert!((est.point + 3.0).abs() < 1e-9);
    }

    #[test]
    fn estimators_are_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 300;
        let x = DMatrix::from_fn(n, 1, |_, _| StandardNormal.sample(&mut rng));
        let d: Vec<f64> = (0..n)
            .map(|i| if rng.random::<f64>() < regress::expit(x[(i, 0)]) { 1.0 } else { 0.0 })
            .collect();
        let y: Vec<f64> = (0..n).map(|i| d[i] + x[(i, 0)] + rng.random::<f64>()).collect();
        let data = validate(RawColumns::new(y, d, x)).unwrap();
        let mut perm: Vec<usize> = (0..n).rev().collect();
        perm.rotate_left(17);
        let shuffled = data.select_rows(&perm);

        let run = |ds: &ObservationalDataset| {
            let ps = estimate_propensity_binary(ds).unwrap();
            vec![
                ate_or(ds, &OrSpec::default(), 1.0, 0.0).unwrap().point,
                ate_ipw(ds, &ps, 1.0, 0.0).unwrap().point,
                ate_psr(ds, &ps, 1.0, 0.0, 2).unwrap().point,
                ate_dr(ds, &OrSpec::default(), &ps, 1.0, 0.0).unwrap().point,
            ]
        };
        for (a, b) in run(&data).iter().zip(run(&shuffled)) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
