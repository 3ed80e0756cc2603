//! Least squares and logistic regression building blocks.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CausalError, Result};

/// Smallest-to-largest singular value ratio below which a design is rejected.
pub const RANK_TOLERANCE: f64 = 1e-10;
/// Default IRLS iteration cap.
pub const DEFAULT_MAX_ITER: usize = 100;
/// Default IRLS convergence tolerance on the max absolute score.
pub const DEFAULT_TOL: f64 = 1e-8;

const SEPARATION_PROB: f64 = 1e-10;
const SEPARATION_COEF: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Link {
    Identity,
    Logit,
}

/// A fitted linear predictor with its link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub coef: DVector<f64>,
    pub link: Link,
    /// `y - fitted` on the response scale.
    pub residuals: Vec<f64>,
    /// Asymptotic covariance of `coef`.
    pub coef_cov: Option<DMatrix<f64>>,
    pub design_width: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Residual variance estimate (RSS / (n - k)) for identity links, 1 for logit.
    pub sigma2: f64,
    pub n_obs: usize,
}

impl LinearFit {
    pub fn rss(&self) -> f64 {
        self.residuals.iter().map(|r| r * r).sum()
    }

    /// Degrees-of-freedom rescaling of the coefficient covariance, e.g. after
    /// absorbing fixed effects that the design does not carry.
    pub(crate) fn rescale_dof(&mut self, extra_params: usize) {
        let k = self.design_width;
        let n = self.n_obs;
        if n > k + extra_params {
            let factor = (n - k) as f64 / (n - k - extra_params) as f64;
            self.sigma2 *= factor;
            if let Some(cov) = self.coef_cov.as_mut() {
                *cov *= factor;
            }
        }
    }
}

/// Numerically stable logistic function.
pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Builds an n×k design from columns.
pub fn design_from_columns(n: usize, columns: &[&[f64]]) -> DMatrix<f64> {
    DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i])
}

/// Appends an intercept column in front of `x`.
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    DMatrix::from_fn(n, x.ncols() + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] })
}

fn singular_ratio(r: &DMatrix<f64>) -> f64 {
    let sv = r.clone().singular_values();
    let max = sv.max();
    if max <= 0.0 || !max.is_finite() {
        return 0.0;
    }
    sv.min() / max
}

/// Rank check used by every solver in the crate.
pub fn check_rank(design: &DMatrix<f64>) -> Result<()> {
    if design.ncols() == 0 {
        return Ok(());
    }
    if design.nrows() < design.ncols() {
        return Err(CausalError::RankDeficient { ratio: 0.0 });
    }
    let r = design.clone().qr().r();
    let ratio = singular_ratio(&r);
    if ratio < RANK_TOLERANCE {
        return Err(CausalError::RankDeficient { ratio });
    }
    Ok(())
}

/// (Weighted) least squares through a QR factorisation.
pub fn fit_ols(design: &DMatrix<f64>, y: &[f64], weights: Option<&[f64]>) -> Result<LinearFit> {
    let (n, k) = design.shape();
    if y.len() != n {
        return Err(CausalError::DimensionMismatch(format!(
            "design has {n} rows but response has {}",
            y.len()
        )));
    }
    if k == 0 {
        return Err(CausalError::DimensionMismatch("design has no columns".into()));
    }
    if n < k {
        return Err(CausalError::RankDeficient { ratio: 0.0 });
    }
    let sqrt_w: Option<Vec<f64>> = match weights {
        Some(w) => {
            if w.len() != n {
                return Err(CausalError::DimensionMismatch(format!(
                    "weights have length {} for {n} rows",
                    w.len()
                )));
            }
            if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(CausalError::InvalidArgument(
                    "weights must be finite and non-negative".into(),
                ));
            }
            Some(w.iter().map(|v| v.sqrt()).collect())
        }
        None => None,
    };

    let (xw, yw) = match &sqrt_w {
        Some(sw) => (
            DMatrix::from_fn(n, k, |i, j| design[(i, j)] * sw[i]),
            DVector::from_fn(n, |i, _| y[i] * sw[i]),
        ),
        None => (design.clone(), DVector::from_column_slice(y)),
    };

    let qr = xw.qr();
    let r = qr.r();
    let ratio = singular_ratio(&r);
    if ratio < RANK_TOLERANCE {
        return Err(CausalError::RankDeficient { ratio });
    }
    let qty = qr.q().transpose() * &yw;
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or(CausalError::RankDeficient { ratio })?;

    let fitted = design * &coef;
    let residuals: Vec<f64> = (0..n).map(|i| y[i] - fitted[i]).collect();
    let rss: f64 = match weights {
        Some(w) => residuals.iter().zip(w).map(|(r, w)| w * r * r).sum(),
        None => residuals.iter().map(|r| r * r).sum(),
    };
    let sigma2 = if n > k { rss / (n - k) as f64 } else { 0.0 };
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or(CausalError::RankDeficient { ratio })?;
    let coef_cov = (&r_inv * r_inv.transpose()) * sigma2;

    Ok(LinearFit {
        coef,
        link: Link::Identity,
        residuals,
        coef_cov: Some(coef_cov),
        design_width: k,
        converged: true,
        iterations: 1,
        sigma2,
        n_obs: n,
    })
}

/// Bernoulli log-likelihood of `coef`.
pub fn logistic_loglik(design: &DMatrix<f64>, d: &[f64], coef: &DVector<f64>) -> f64 {
    let eta = design * coef;
    eta.iter()
        .zip(d)
        .map(|(&e, &di)| {
            // log(1 + exp(e)) computed without overflow
            let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            di * e - softplus
        })
        .sum()
}

/// Score vector `X'(d - p)` of the logistic log-likelihood.
pub fn logistic_score(design: &DMatrix<f64>, d: &[f64], coef: &DVector<f64>) -> DVector<f64> {
    let eta = design * coef;
    let resid = DVector::from_fn(d.len(), |i, _| d[i] - expit(eta[i]));
    design.transpose() * resid
}

fn fisher_information(design: &DMatrix<f64>, p: &[f64]) -> DMatrix<f64> {
    let (n, k) = design.shape();
    let mut info = DMatrix::zeros(k, k);
    for i in 0..n {
        let w = p[i] * (1.0 - p[i]);
        for a in 0..k {
            let xa = design[(i, a)] * w;
            for b in a..k {
                info[(a, b)] += xa * design[(i, b)];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            info[(a, b)] = info[(b, a)];
        }
    }
    info
}

fn separated(p: &[f64], coef: &DVector<f64>) -> bool {
    let pinned = p
        .iter()
        .any(|&v| v < SEPARATION_PROB || v > 1.0 - SEPARATION_PROB);
    pinned && coef.amax() > SEPARATION_COEF
}

/// Logistic regression by iteratively reweighted least squares (Newton steps
/// with step halving), started at zero.
pub fn fit_logistic(
    design: &DMatrix<f64>,
    d: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<LinearFit> {
    let (n, k) = design.shape();
    if d.len() != n {
        return Err(CausalError::DimensionMismatch(format!(
            "design has {n} rows but response has {}",
            d.len()
        )));
    }
    if k == 0 {
        return Err(CausalError::DimensionMismatch("design has no columns".into()));
    }
    if !crate::data::is_binary(d) {
        return Err(CausalError::InvalidArgument(
            "logistic response must be coded 0/1".into(),
        ));
    }
    let n1 = d.iter().filter(|&&v| v == 1.0).count();
    if n1 == 0 || n1 == n {
        return Err(CausalError::NoVariationInD);
    }
    check_rank(design)?;

    let mut coef = DVector::zeros(k);
    let mut loglik = logistic_loglik(design, d, &coef);
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let eta = design * &coef;
        let p: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
        let score = design.transpose() * DVector::from_fn(n, |i, _| d[i] - p[i]);
        if score.amax() < tol {
            converged = true;
            break;
        }
        if separated(&p, &coef) {
            return Err(CausalError::SeparationDetected);
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        let info = fisher_information(design, &p);
        let step = match info.cholesky() {
            Some(ch) => ch.solve(&score),
            None => {
                if p.iter().any(|&v| v < 1e-8 || v > 1.0 - 1e-8) {
                    return Err(CausalError::SeparationDetected);
                }
                return Err(CausalError::RankDeficient { ratio: 0.0 });
            }
        };

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate = &coef + &step * scale;
            let ll = logistic_loglik(design, d, &candidate);
            if ll.is_finite() && ll >= loglik - 1e-12 * loglik.abs().max(1.0) {
                coef = candidate;
                loglik = ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    let eta = design * &coef;
    let p: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
    if !converged {
        if separated(&p, &coef) {
            return Err(CausalError::SeparationDetected);
        }
        return Err(CausalError::NotConverged { iterations });
    }
    let info = fisher_information(design, &p);
    let coef_cov = info.try_inverse();
    let residuals = d.iter().zip(&p).map(|(di, pi)| di - pi).collect();

    Ok(LinearFit {
        coef,
        link: Link::Logit,
        residuals,
        coef_cov,
        design_width: k,
        converged,
        iterations,
        sigma2: 1.0,
        n_obs: n,
    })
}

/// Response-scale predictions for new rows.
pub fn predict(fit: &LinearFit, design_new: &DMatrix<f64>) -> Result<Vec<f64>> {
    if design_new.ncols() != fit.design_width {
        return Err(CausalError::DimensionMismatch(format!(
            "model has {} coefficients, rows have width {}",
            fit.design_width,
            design_new.ncols()
        )));
    }
    let eta = design_new * &fit.coef;
    Ok(match fit.link {
        Link::Identity => eta.iter().copied().collect(),
        Link::Logit => eta.iter().map(|&e| expit(e)).collect(),
    })
}

/// Prediction at a single row.
pub fn predict_row(fit: &LinearFit, row: &[f64]) -> f64 {
    let eta: f64 = row.iter().zip(fit.coef.iter()).map(|(a, b)| a * b).sum();
    match fit.link {
        Link::Identity => eta,
        Link::Logit => expit(eta),
    }
}

/// Gradient of the response-scale prediction at `row` with respect to the coefficients.
pub fn prediction_gradient(fit: &LinearFit, row: &[f64]) -> Vec<f64> {
    match fit.link {
        Link::Identity => row.to_vec(),
        Link::Logit => {
            let p = predict_row(fit, row);
            row.iter().map(|&v| v * p * (1.0 - p)).collect()
        }
    }
}
