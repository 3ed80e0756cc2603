use nalgebra::{DMatrix, DVector};

use crate::data::{CausalEstimate, ObservationalDataset};
use crate::error::{CausalError, Result};
use crate::regress;

const FIRST_STAGE_TOL: f64 = 1e-12;

fn centered_cov(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0)
}

/// Single-instrument estimator `Cov(z, y) / Cov(z, d)`.
pub fn iv_ratio(y: &[f64], d: &[f64], z: &[f64]) -> Result<CausalEstimate> {
    let n = y.len();
    if d.len() != n || z.len() != n {
        return Err(CausalError::DimensionMismatch(format!(
            "y has {n} rows, d has {}, z has {}",
            d.len(),
            z.len()
        )));
    }
    if n < 2 {
        return Err(CausalError::EmptyDataset);
    }
    let czd = centered_cov(z, d);
    if czd.abs() < FIRST_STAGE_TOL {
        return Err(CausalError::WeakOrZeroFirstStage { cov: czd });
    }
    let beta = centered_cov(z, y) / czd;

    let mut est = CausalEstimate::ate("iv_ratio", 1.0, 0.0, beta, n);
    if n > 2 {
        let nf = n as f64;
        let (my, md) = (y.iter().sum::<f64>() / nf, d.iter().sum::<f64>() / nf);
        let alpha = my - beta * md;
        let sigma2 = y
            .iter()
            .zip(d)
            .map(|(yi, di)| (yi - alpha - beta * di).powi(2))
            .sum::<f64>()
            / (nf - 2.0);
        let szz = centered_cov(z, z) * (nf - 1.0);
        let szd = czd * (nf - 1.0);
        // first-stage F for a single instrument is the squared t statistic
        let sdd = centered_cov(d, d) * (nf - 1.0);
        let r2 = szd * szd / (szz * sdd);
        let f = if r2 < 1.0 { r2 / (1.0 - r2) * (nf - 2.0) } else { f64::INFINITY };
        est = est
            .with_variance(sigma2 * szz / (szd * szd))
            .with_diagnostic("first_stage_f", f);
    }
    Ok(est)
}

/// Result of a two-stage least squares fit. Coefficients are ordered as
/// the endogenous columns followed by the exogenous columns.
#[derive(Debug, Clone)]
pub struct TslsFit {
    pub coef: DVector<f64>,
    pub coef_cov: DMatrix<f64>,
    /// Residuals `y - X b` computed with the original regressors.
    pub residuals: Vec<f64>,
    /// Excluded-instrument F statistic per endogenous column.
    pub first_stage_f: Vec<f64>,
}

fn hcat(blocks: &[&DMatrix<f64>], n: usize) -> DMatrix<f64> {
    let width = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, width);
    let mut c = 0;
    for b in blocks {
        out.columns_mut(c, b.ncols()).copy_from(b);
        c += b.ncols();
    }
    out
}

/// Two-stage least squares. `exog` holds the included exogenous regressors
/// (add a column of ones for an intercept); `instruments` holds the
/// excluded instruments only.
pub fn two_stage_least_squares(
    y: &[f64],
    endog: &DMatrix<f64>,
    exog: &DMatrix<f64>,
    instruments: &DMatrix<f64>,
) -> Result<TslsFit> {
    let n = y.len();
    for (name, m) in [("endogenous", endog), ("exogenous", exog), ("instrument", instruments)] {
        if m.nrows() != n {
            return Err(CausalError::DimensionMismatch(format!(
                "{name} block has {} rows, expected {n}",
                m.nrows()
            )));
        }
    }
    if instruments.ncols() < endog.ncols() {
        return Err(CausalError::OrderConditionViolated {
            instruments: instruments.ncols(),
            endogenous: endog.ncols(),
        });
    }
    let z = hcat(&[exog, instruments], n);
    regress::check_rank(&z)?;

    // first stage: project each endogenous column on the full instrument set
    let mut first_stage_f = Vec::with_capacity(endog.ncols());
    let mut fitted_endog = DMatrix::zeros(n, endog.ncols());
    for j in 0..endog.ncols() {
        let col: Vec<f64> = endog.column(j).iter().copied().collect();
        let full = regress::fit_ols(&z, &col, None)?;
        let rss_u = full.rss();
        let rss_r = if exog.ncols() == 0 {
            col.iter().map(|v| v * v).sum()
        } else {
            regress::fit_ols(exog, &col, None)?.rss()
        };
        let l = instruments.ncols() as f64;
        let dof = n as f64 - z.ncols() as f64;
        first_stage_f.push(if rss_u > 0.0 && dof > 0.0 {
            ((rss_r - rss_u) / l) / (rss_u / dof)
        } else {
            f64::INFINITY
        });
        for i in 0..n {
            fitted_endog[(i, j)] = col[i] - full.residuals[i];
        }
    }

    let x_hat = hcat(&[&fitted_endog, exog], n);
    let second = regress::fit_ols(&x_hat, y, None)?;
    let x = hcat(&[endog, exog], n);
    let fitted = &x * &second.coef;
    let residuals: Vec<f64> = (0..n).map(|i| y[i] - fitted[i]).collect();
    let k = x.ncols();
    let sigma2 = residuals.iter().map(|r| r * r).sum::<f64>() / (n as f64 - k as f64);
    // second.coef_cov is sigma2_hat (X'X)^-1 on the projected design; swap the scale
    let base = second.coef_cov.ok_or(CausalError::MissingCoefCovariance)?;
    let coef_cov = if second.sigma2 > 0.0 {
        base * (sigma2 / second.sigma2)
    } else {
        let xtx = x_hat.transpose() * &x_hat;
        xtx.try_inverse()
            .ok_or(CausalError::RankDeficient { ratio: 0.0 })?
            * sigma2
    };
    Ok(TslsFit {
        coef: second.coef,
        coef_cov,
        residuals,
        first_stage_f,
    })
}

/// 2SLS effect of the (endogenous) treatment using the dataset's instruments,
/// with an intercept and every covariate treated as exogenous.
pub fn ate_2sls(ds: &ObservationalDataset) -> Result<CausalEstimate> {
    let z = ds
        .z()
        .ok_or_else(|| CausalError::InvalidArgument("dataset has no instrument columns".into()))?;
    let n = ds.n();
    let endog = DMatrix::from_column_slice(n, 1, ds.d());
    let exog = regress::with_intercept(ds.x());
    let fit = two_stage_least_squares(ds.y(), &endog, &exog, z)?;
    Ok(CausalEstimate::ate("2sls", 1.0, 0.0, fit.coef[0], n)
        .with_variance(fit.coef_cov[(0, 0)])
        .with_diagnostic("first_stage_f", fit.first_stage_f[0]))
}
