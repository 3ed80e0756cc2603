use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::CausalEstimate;
use crate::error::{CausalError, Result};
use crate::quasi::iv::two_stage_least_squares;
use crate::regress;

/// Smallest first-stage jump in treatment probability accepted by the fuzzy design.
pub const MIN_FIRST_STAGE_JUMP: f64 = 0.05;

/// Regression-discontinuity options. The default is the global linear
/// specification with separate slopes on each side of the cutoff.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RddSpec {
    /// Keep only observations with `|t - c| <= bandwidth`.
    pub bandwidth: Option<f64>,
}

struct Window {
    rows: Vec<usize>,
    /// `1[t >= c]`
    above: Vec<f64>,
    centered: Vec<f64>,
}

fn window(y: &[f64], t: &[f64], extra: Option<&[f64]>, c: f64, spec: &RddSpec) -> Result<Window> {
    let n = y.len();
    if t.len() != n || extra.is_some_and(|d| d.len() != n) {
        return Err(CausalError::DimensionMismatch(
            "outcome, running variable and treatment lengths differ".into(),
        ));
    }
    if let Some(h) = spec.bandwidth {
        if !(h > 0.0) {
            return Err(CausalError::InvalidArgument("bandwidth must be positive".into()));
        }
    }
    let rows: Vec<usize> = (0..n)
        .filter(|&i| spec.bandwidth.is_none_or(|h| (t[i] - c).abs() <= h))
        .collect();
    let above: Vec<f64> = rows.iter().map(|&i| (t[i] >= c) as u8 as f64).collect();
    if !above.iter().any(|&a| a == 1.0) {
        return Err(CausalError::OneSidedData { side: "upper" });
    }
    if !above.iter().any(|&a| a == 0.0) {
        return Err(CausalError::OneSidedData { side: "lower" });
    }
    let centered = rows.iter().map(|&i| t[i] - c).collect();
    Ok(Window {
        rows,
        above,
        centered,
    })
}

/// Design `(1, D, t - c, D (t - c))`.
fn sharp_design(w: &Window) -> DMatrix<f64> {
    DMatrix::from_fn(w.rows.len(), 4, |i, j| match j {
        0 => 1.0,
        1 => w.above[i],
        2 => w.centered[i],
        _ => w.above[i] * w.centered[i],
    })
}

/// Sharp design: the jump coefficient of `y ~ 1 + D + (t - c) + D (t - c)`
/// with `D = 1[t >= c]`.
pub fn rdd_sharp(y: &[f64], t: &[f64], c: f64, spec: &RddSpec) -> Result<CausalEstimate> {
    let w = window(y, t, None, c, spec)?;
    let ys: Vec<f64> = w.rows.iter().map(|&i| y[i]).collect();
    let fit = regress::fit_ols(&sharp_design(&w), &ys, None)?;
    let mut est = CausalEstimate::ate("rdd_sharp", 1.0, 0.0, fit.coef[1], w.rows.len());
    if let Some(cov) = &fit.coef_cov {
        est = est.with_variance(cov[(1, 1)]);
    }
    Ok(est)
}

/// Fuzzy design: 2SLS with the observed treatment instrumented by `1[t >= c]`
/// and the side-specific linear trends as exogenous controls.
pub fn rdd_fuzzy(
    y: &[f64],
    t: &[f64],
    d_observed: &[f64],
    c: f64,
    spec: &RddSpec,
) -> Result<CausalEstimate> {
    let w = window(y, t, Some(d_observed), c, spec)?;
    let m = w.rows.len();
    let ys: Vec<f64> = w.rows.iter().map(|&i| y[i]).collect();
    let ds: Vec<f64> = w.rows.iter().map(|&i| d_observed[i]).collect();

    let first = regress::fit_ols(&sharp_design(&w), &ds, None)?;
    let jump = first.coef[1];
    if jump.abs() <= MIN_FIRST_STAGE_JUMP {
        return Err(CausalError::NoFirstStageJump { jump });
    }

    let endog = DMatrix::from_column_slice(m, 1, &ds);
    let exog = DMatrix::from_fn(m, 3, |i, j| match j {
        0 => 1.0,
        1 => w.centered[i],
        _ => w.above[i] * w.centered[i],
    });
    let inst = DMatrix::from_column_slice(m, 1, &w.above);
    let fit = two_stage_least_squares(&ys, &endog, &exog, &inst)?;
    Ok(CausalEstimate::ate("rdd_fuzzy", 1.0, 0.0, fit.coef[0], m)
        .with_variance(fit.coef_cov[(0, 0)])
        .with_diagnostic("first_stage_jump", jump)
        .with_diagnostic("first_stage_f", fit.first_stage_f[0]))
}
