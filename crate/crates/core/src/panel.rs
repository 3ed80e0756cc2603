//! Linear panel estimators: pooled OLS, random effects, fixed effects,
//! first differences and correlated random effects.
//!
//! | method | unit effect correlated with `d` | needs within variation in `d` |
//! |--------|---------------------------------|-------------------------------|
//! | POLS   | inconsistent                    | no                            |
//! | RE     | inconsistent                    | no                            |
//! | FE     | consistent                      | yes                           |
//! | FD     | consistent                      | yes                           |
//! | CRE    | consistent                      | yes (through `d - mean(d)`)   |

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{CausalEstimate, PanelDataset};
use crate::error::{CausalError, Result};
use crate::regress::{self, LinearFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PanelMethod {
    Pols,
    Re,
    Fe,
    Fd,
    Cre,
}

impl PanelMethod {
    pub const ALL: [PanelMethod; 5] = [
        PanelMethod::Pols,
        PanelMethod::Re,
        PanelMethod::Fd,
        PanelMethod::Fe,
        PanelMethod::Cre,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PanelMethod::Pols => "POLS",
            PanelMethod::Re => "RE",
            PanelMethod::Fe => "FE",
            PanelMethod::Fd => "FD",
            PanelMethod::Cre => "CRE",
        }
    }
}

impl std::str::FromStr for PanelMethod {
    type Err = CausalError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pols" => Ok(PanelMethod::Pols),
            "re" => Ok(PanelMethod::Re),
            "fe" => Ok(PanelMethod::Fe),
            "fd" => Ok(PanelMethod::Fd),
            "cre" => Ok(PanelMethod::Cre),
            other => Err(CausalError::InvalidArgument(format!("unknown panel method {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSpec {
    pub method: PanelMethod,
    /// Ignored by FE, whose demeaning removes any constant.
    pub include_intercept: bool,
    /// Covariate columns; `None` uses every column.
    pub covariates: Option<Vec<usize>>,
}

impl PanelSpec {
    pub fn new(method: PanelMethod) -> Self {
        Self {
            method,
            include_intercept: true,
            covariates: None,
        }
    }
}

/// Column-wise helper for building designs out of named regressors.
struct Regressors {
    cols: Vec<Vec<f64>>,
}

impl Regressors {
    fn new() -> Self {
        Self { cols: Vec::new() }
    }

    fn push(&mut self, col: Vec<f64>) {
        self.cols.push(col);
    }

    fn design(&self, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, self.cols.len(), |i, j| self.cols[j][i])
    }
}

fn unit_means(pds: &PanelDataset, v: &[f64]) -> Vec<f64> {
    pds.groups()
        .iter()
        .map(|rows| rows.iter().map(|&r| v[r]).sum::<f64>() / rows.len() as f64)
        .collect()
}

/// Each row's value minus its unit mean.
fn demean(pds: &PanelDataset, v: &[f64]) -> Vec<f64> {
    let means = unit_means(pds, v);
    let mut out = v.to_vec();
    for (g, rows) in pds.groups().iter().enumerate() {
        for &r in rows {
            out[r] -= means[g];
        }
    }
    out
}

/// Each row's unit mean, broadcast back to the rows.
fn broadcast_means(pds: &PanelDataset, v: &[f64]) -> Vec<f64> {
    let means = unit_means(pds, v);
    let mut out = vec![0.0; v.len()];
    for (g, rows) in pds.groups().iter().enumerate() {
        for &r in rows {
            out[r] = means[g];
        }
    }
    out
}

fn varies(v: &[f64]) -> bool {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    v.iter().any(|x| (x - v[0]).abs() > 1e-12 * scale)
}

fn covariate_columns(pds: &PanelDataset, spec: &PanelSpec) -> Result<Vec<Vec<f64>>> {
    let p = pds.x().ncols();
    let cols: Vec<usize> = match &spec.covariates {
        None => (0..p).collect(),
        Some(c) => c.clone(),
    };
    cols.iter()
        .map(|&c| {
            if c >= p {
                Err(CausalError::InvalidArgument(format!(
                    "covariate column {c} does not exist (panel has {p})"
                )))
            } else {
                Ok(pds.x().column(c).iter().copied().collect())
            }
        })
        .collect()
}

fn require_periods(pds: &PanelDataset) -> Result<()> {
    for rows in pds.groups() {
        if rows.len() < 2 {
            return Err(CausalError::TooFewPeriods {
                unit: pds.unit()[rows[0]],
            });
        }
    }
    Ok(())
}

/// Fitted panel regression; the treatment coefficient sits at `d_index`.
struct PanelFit {
    fit: LinearFit,
    d_index: usize,
    dropped: usize,
}

fn pols(pds: &PanelDataset, xs: &[Vec<f64>], intercept: bool) -> Result<PanelFit> {
    let n = pds.n();
    let mut reg = Regressors::new();
    if intercept {
        reg.push(vec![1.0; n]);
    }
    reg.push(pds.d().to_vec());
    xs.iter().for_each(|c| reg.push(c.clone()));
    Ok(PanelFit {
        fit: regress::fit_ols(&reg.design(n), pds.y(), None)?,
        d_index: intercept as usize,
        dropped: 0,
    })
}

/// Within regression on demeaned data. Covariates without within-unit
/// variation are dropped since demeaning turns them into zero columns.
fn within(pds: &PanelDataset, xs: &[Vec<f64>]) -> Result<PanelFit> {
    let n = pds.n();
    let dd = demean(pds, pds.d());
    if !dd.iter().any(|v| v.abs() > 1e-12 * pds.d().iter().fold(1.0f64, |m, x| m.max(x.abs()))) {
        return Err(CausalError::NoWithinVariation);
    }
    let mut reg = Regressors::new();
    reg.push(dd);
    let mut dropped = 0;
    for c in xs {
        let dm = demean(pds, c);
        if dm.iter().any(|v| v.abs() > 1e-12) {
            reg.push(dm);
        } else {
            dropped += 1;
        }
    }
    let mut fit = regress::fit_ols(&reg.design(n), &demean(pds, pds.y()), None)?;
    fit.rescale_dof(pds.n_units());
    Ok(PanelFit {
        fit,
        d_index: 0,
        dropped,
    })
}

fn first_difference(pds: &PanelDataset, xs: &[Vec<f64>], intercept: bool) -> Result<PanelFit> {
    let pairs: Vec<(usize, usize)> = pds
        .groups()
        .iter()
        .flat_map(|rows| rows.windows(2).map(|w| (w[0], w[1])))
        .collect();
    let diff = |v: &[f64]| -> Vec<f64> { pairs.iter().map(|&(a, b)| v[b] - v[a]).collect() };
    let m = pairs.len();
    let dd = diff(pds.d());
    let usable = if intercept { varies(&dd) } else { dd.iter().any(|v| *v != 0.0) };
    if !usable {
        return Err(CausalError::NoWithinVariation);
    }
    let mut reg = Regressors::new();
    if intercept {
        reg.push(vec![1.0; m]);
    }
    reg.push(dd);
    let mut dropped = 0;
    for c in xs {
        let dc = diff(c);
        let keep = if intercept { varies(&dc) } else { dc.iter().any(|v| *v != 0.0) };
        if keep {
            reg.push(dc);
        } else {
            dropped += 1;
        }
    }
    Ok(PanelFit {
        fit: regress::fit_ols(&reg.design(m), &diff(pds.y()), None)?,
        d_index: intercept as usize,
        dropped,
    })
}

fn correlated_re(pds: &PanelDataset, xs: &[Vec<f64>], intercept: bool) -> Result<PanelFit> {
    let n = pds.n();
    let mut reg = Regressors::new();
    if intercept {
        reg.push(vec![1.0; n]);
    }
    reg.push(pds.d().to_vec());
    xs.iter().for_each(|c| reg.push(c.clone()));
    reg.push(broadcast_means(pds, pds.d()));
    let design = reg.design(n);
    if regress::check_rank(&design).is_err() {
        return Err(CausalError::NoWithinVariation);
    }
    Ok(PanelFit {
        fit: regress::fit_ols(&design, pds.y(), None)?,
        d_index: intercept as usize,
        dropped: 0,
    })
}

/// Feasible GLS with Swamy–Arora variance components. Returns the fit and
/// the estimated `(sigma_e^2, sigma_alpha^2)`, or `None` for the components
/// when the between variance is not positive and the fit fell back to POLS.
fn random_effects(
    pds: &PanelDataset,
    xs: &[Vec<f64>],
    intercept: bool,
) -> Result<(PanelFit, Option<(f64, f64)>)> {
    let n_units = pds.n_units();
    // idiosyncratic variance from the within regression
    let sigma_e2 = match within(pds, xs) {
        Ok(w) => {
            let k = w.fit.design_width;
            let dof = pds.n() as f64 - n_units as f64 - k as f64;
            (dof > 0.0).then(|| w.fit.rss() / dof)
        }
        Err(_) => None,
    };
    // between regression on unit means
    let between = || -> Result<f64> {
        let mut reg = Regressors::new();
        reg.push(vec![1.0; n_units]);
        reg.push(unit_means(pds, pds.d()));
        xs.iter().for_each(|c| reg.push(unit_means(pds, c)));
        let fit = regress::fit_ols(&reg.design(n_units), &unit_means(pds, pds.y()), None)?;
        let dof = n_units as f64 - fit.design_width as f64;
        if dof <= 0.0 {
            return Err(CausalError::InvalidArgument("too few units for the between regression".into()));
        }
        Ok(fit.rss() / dof)
    };
    let periods = pds.periods();
    let harmonic_t = n_units as f64 / periods.iter().map(|&t| 1.0 / t as f64).sum::<f64>();
    let components = match (sigma_e2, between()) {
        (Some(se2), Ok(sb2)) => {
            let sa2 = sb2 - se2 / harmonic_t;
            (sa2 > 0.0).then_some((se2, sa2))
        }
        _ => None,
    };
    let Some((se2, sa2)) = components else {
        return Ok((pols(pds, xs, intercept)?, None));
    };

    // quasi-demeaning with theta_i = 1 - sqrt(se2 / (se2 + T_i sa2))
    let mut theta = vec![0.0; pds.n()];
    for (g, rows) in pds.groups().iter().enumerate() {
        let th = 1.0 - (se2 / (se2 + periods[g] as f64 * sa2)).sqrt();
        rows.iter().for_each(|&r| theta[r] = th);
    }
    let quasi = |v: &[f64]| -> Vec<f64> {
        let m = broadcast_means(pds, v);
        (0..v.len()).map(|i| v[i] - theta[i] * m[i]).collect()
    };
    let mut reg = Regressors::new();
    if intercept {
        reg.push(theta.iter().map(|t| 1.0 - t).collect());
    }
    reg.push(quasi(pds.d()));
    xs.iter().for_each(|c| reg.push(quasi(c)));
    let fit = regress::fit_ols(&reg.design(pds.n()), &quasi(pds.y()), None)?;
    Ok((
        PanelFit {
            fit,
            d_index: intercept as usize,
            dropped: 0,
        },
        Some((se2, sa2)),
    ))
}

/// Fit one of the five panel specifications and report the coefficient on `d`.
pub fn fit_panel(pds: &PanelDataset, spec: &PanelSpec) -> Result<CausalEstimate> {
    let xs = covariate_columns(pds, spec)?;
    let intercept = spec.include_intercept;
    let mut extra: Vec<(&str, f64)> = Vec::new();
    let pf = match spec.method {
        PanelMethod::Pols => pols(pds, &xs, intercept)?,
        PanelMethod::Re => {
            let (pf, comps) = random_effects(pds, &xs, intercept)?;
            match comps {
                Some((se2, sa2)) => {
                    extra.push(("sigma_e2", se2));
                    extra.push(("sigma_alpha2", sa2));
                }
                None => extra.push(("re_fallback_pols", 1.0)),
            }
            pf
        }
        PanelMethod::Fe => {
            require_periods(pds)?;
            within(pds, &xs)?
        }
        PanelMethod::Fd => {
            require_periods(pds)?;
            first_difference(pds, &xs, intercept)?
        }
        PanelMethod::Cre => {
            require_periods(pds)?;
            correlated_re(pds, &xs, intercept)?
        }
    };
    let point = pf.fit.coef[pf.d_index];
    let mut est = CausalEstimate::ate(&spec.method.label().to_ascii_lowercase(), 1.0, 0.0, point, pf.fit.n_obs)
        .with_diagnostic("n_units", pds.n_units() as f64);
    if let Some(cov) = &pf.fit.coef_cov {
        est = est.with_variance(cov[(pf.d_index, pf.d_index)]);
    }
    if pf.dropped > 0 {
        est = est.with_diagnostic("dropped_covariates", pf.dropped as f64);
    }
    for (k, v) in extra {
        est = est.with_diagnostic(k, v);
    }
    Ok(est)
}
