//! Synthetic control: convex donor weights matching the treated unit's
//! characteristics, with a diagonal importance matrix chosen to best
//! reproduce the pre-period outcome path.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::data::CausalEstimate;
use crate::error::{CausalError, Result};

const MAX_ITER: usize = 5_000;
const GRAD_TOL: f64 = 1e-10;

/// Inputs for one treated unit and `J` donors.
#[derive(Debug, Clone, PartialEq)]
pub struct ScProblem {
    /// Treated characteristics, length K.
    pub x1: Vec<f64>,
    /// Donor characteristics, K x J.
    pub x0: DMatrix<f64>,
    /// Treated pre-period outcomes, length T_p.
    pub z1: Vec<f64>,
    /// Donor pre-period outcomes, T_p x J.
    pub z0: DMatrix<f64>,
    /// Treated post-period outcomes, length T.
    pub y1: Vec<f64>,
    /// Donor post-period outcomes, T x J.
    pub y0: DMatrix<f64>,
}

impl ScProblem {
    fn validate(&self) -> Result<()> {
        let j = self.x0.ncols();
        let dims = [
            ("x0 rows", self.x0.nrows(), self.x1.len()),
            ("z0 rows", self.z0.nrows(), self.z1.len()),
            ("y0 rows", self.y0.nrows(), self.y1.len()),
            ("z0 columns", self.z0.ncols(), j),
            ("y0 columns", self.y0.ncols(), j),
        ];
        for (what, found, expected) in dims {
            if found != expected {
                return Err(CausalError::DimensionMismatch(format!(
                    "{what}: {found}, expected {expected}"
                )));
            }
        }
        if j == 0 || self.x1.is_empty() || self.z1.is_empty() {
            return Err(CausalError::DimensionMismatch(
                "need at least one donor, one characteristic and one pre-period".into(),
            ));
        }
        Ok(())
    }
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cumsum += uk;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn weighted_loss(x1: &[f64], x0: &DMatrix<f64>, v: &[f64], w: &[f64]) -> f64 {
    (0..x1.len())
        .map(|k| {
            let fit: f64 = (0..w.len()).map(|j| x0[(k, j)] * w[j]).sum();
            v[k] * (x1[k] - fit).powi(2)
        })
        .sum()
}

fn one_hot(j: usize, len: usize) -> Vec<f64> {
    let mut w = vec![0.0; len];
    w[j] = 1.0;
    w
}

/// Donor weights minimising `(x1 - x0 w)' diag(v) (x1 - x0 w)` over the simplex.
pub fn sc_weights(x1: &[f64], x0: &DMatrix<f64>, v_diag: &[f64]) -> Result<Vec<f64>> {
    let (k, j) = (x0.nrows(), x0.ncols());
    if x1.len() != k || v_diag.len() != k {
        return Err(CausalError::DimensionMismatch(format!(
            "x1 has {}, v has {}, x0 has {k} rows",
            x1.len(),
            v_diag.len()
        )));
    }
    if j == 0 {
        return Err(CausalError::DimensionMismatch("no donor columns".into()));
    }
    if v_diag.iter().any(|&v| !(v >= 0.0)) || v_diag.iter().all(|&v| v == 0.0) {
        return Err(CausalError::InvalidArgument(
            "importance weights must be non-negative and not all zero".into(),
        ));
    }
    if j == 1 {
        return Ok(vec![1.0]);
    }
    let scale = x1.iter().chain(x0.iter()).fold(1.0f64, |m, v| m.max(v.abs()));
    if let Some(exact) = (0..j).find(|&c| (0..k).all(|r| (x0[(r, c)] - x1[r]).abs() <= 1e-12 * scale)) {
        return Ok(one_hot(exact, j));
    }

    // gradient of the loss is 2 A w - 2 b with A = x0' V x0, b = x0' V x1
    let mut a = DMatrix::<f64>::zeros(j, j);
    let mut b = vec![0.0; j];
    for r in 0..k {
        for c1 in 0..j {
            b[c1] += v_diag[r] * x0[(r, c1)] * x1[r];
            for c2 in 0..j {
                a[(c1, c2)] += v_diag[r] * x0[(r, c1)] * x0[(r, c2)];
            }
        }
    }
    let lipschitz = 2.0 * SymmetricEigen::new(a.clone()).eigenvalues.amax();
    let loss = |w: &[f64]| weighted_loss(x1, x0, v_diag, w);
    if lipschitz <= 0.0 {
        return Ok(vec![1.0 / j as f64; j]);
    }
    let step = 1.0 / lipschitz;
    let grad = |w: &[f64]| -> Vec<f64> {
        (0..j)
            .map(|c| 2.0 * ((0..j).map(|c2| a[(c, c2)] * w[c2]).sum::<f64>() - b[c]))
            .collect()
    };

    // accelerated projected gradient with restart on objective increase
    let mut w = vec![1.0 / j as f64; j];
    let mut y = w.clone();
    let mut t = 1.0f64;
    let mut f_w = loss(&w);
    for _ in 0..MAX_ITER {
        let g = grad(&y);
        let cand: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi - step * gi).collect();
        let w_next = project_simplex(&cand);
        let f_next = loss(&w_next);
        let moved = w_next
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
            / step;
        if f_next > f_w {
            // restart momentum from the current best point
            y = w.clone();
            t = 1.0;
            continue;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let beta = (t - 1.0) / t_next;
        y = w_next
            .iter()
            .zip(&w)
            .map(|(n, o)| n + beta * (n - o))
            .collect();
        w = w_next;
        f_w = f_next;
        t = t_next;
        if moved <= GRAD_TOL {
            break;
        }
    }

    // never return something worse than a single donor
    for c in 0..j {
        let vertex = one_hot(c, j);
        if loss(&vertex) < f_w {
            f_w = loss(&vertex);
            w = vertex;
        }
    }
    Ok(w)
}

/// Fitted synthetic control.
#[derive(Debug, Clone)]
pub struct ScFit {
    pub weights: Vec<f64>,
    pub v: Vec<f64>,
    /// Post-period gaps `y1 - y0 w`.
    pub gaps: Vec<f64>,
    /// Pre-period mean squared prediction error.
    pub pre_mspe: f64,
    pub estimate: CausalEstimate,
}

fn v_from_theta(theta: &[f64]) -> Vec<f64> {
    let s: f64 = theta.iter().map(|t| t * t).sum();
    if s <= 0.0 {
        return vec![1.0 / theta.len() as f64; theta.len()];
    }
    theta.iter().map(|t| t * t / s).collect()
}

/// Nelder–Mead minimisation from `start`; returns the best point and value.
fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, start: &[f64], step: f64, max_evals: usize) -> (Vec<f64>, f64) {
    let dim = start.len();
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..dim {
        let mut p = start.to_vec();
        p[i] += if p[i].abs() > 1e-8 { step * p[i].abs().max(0.5) } else { step };
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| f(p)).collect();
    let mut evals = values.len();
    while evals < max_evals {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        if (values[dim] - values[0]).abs() <= 1e-14 * (1.0 + values[0].abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|c| simplex[..dim].iter().map(|p| p[c]).sum::<f64>() / dim as f64)
            .collect();
        let along = |coef: f64| -> Vec<f64> {
            (0..dim)
                .map(|c| centroid[c] + coef * (simplex[dim][c] - centroid[c]))
                .collect()
        };
        let reflected = along(-1.0);
        let fr = f(&reflected);
        evals += 1;
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            evals += 1;
            if fe < fr {
                simplex[dim] = expanded;
                values[dim] = fe;
            } else {
                simplex[dim] = reflected;
                values[dim] = fr;
            }
        } else if fr < values[dim - 1] {
            simplex[dim] = reflected;
            values[dim] = fr;
        } else {
            let contracted = if fr < values[dim] { along(-0.5) } else { along(0.5) };
            let fc = f(&contracted);
            evals += 1;
            if fc < values[dim].min(fr) {
                simplex[dim] = contracted;
                values[dim] = fc;
            } else {
                for i in 1..=dim {
                    simplex[i] = (0..dim)
                        .map(|c| simplex[0][c] + 0.5 * (simplex[i][c] - simplex[0][c]))
                        .collect();
                    values[i] = f(&simplex[i]);
                    evals += 1;
                }
            }
        }
    }
    let best = (0..=dim)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    (simplex[best].clone(), values[best])
}

/// Full synthetic-control fit: outer search over diagonal `V` (normalised to
/// sum to one) minimising the pre-period outcome discrepancy.
pub fn sc_fit(problem: &ScProblem) -> Result<ScFit> {
    problem.validate()?;
    let j = problem.x0.ncols();
    let k = problem.x1.len();
    if j > 1 {
        let same = |m: &DMatrix<f64>| (1..j).all(|c| m.column(c) == m.column(0));
        if same(&problem.x0) && same(&problem.z0) {
            return Err(CausalError::DegenerateProblem);
        }
    }

    let pre_loss = |w: &[f64]| -> f64 {
        (0..problem.z1.len())
            .map(|t| {
                let fit: f64 = (0..j).map(|c| problem.z0[(t, c)] * w[c]).sum();
                (problem.z1[t] - fit).powi(2)
            })
            .sum()
    };
    let outer = |theta: &[f64]| -> f64 {
        match sc_weights(&problem.x1, &problem.x0, &v_from_theta(theta)) {
            Ok(w) => pre_loss(&w),
            Err(_) => f64::INFINITY,
        }
    };

    let mut starts = vec![vec![1.0; k]];
    if k > 1 {
        for c in 0..k {
            let mut s = vec![0.05; k];
            s[c] = 1.0;
            starts.push(s);
        }
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in &starts {
        let (theta, val) = if k == 1 {
            (s.clone(), outer(s))
        } else {
            nelder_mead(&outer, s, 0.5, 200 * k)
        };
        if best.as_ref().is_none_or(|b| val < b.1) {
            best = Some((theta, val));
        }
    }
    let (theta, _) = best.ok_or(CausalError::DegenerateProblem)?;
    let v = v_from_theta(&theta);
    let weights = sc_weights(&problem.x1, &problem.x0, &v)?;
    let gaps: Vec<f64> = (0..problem.y1.len())
        .map(|t| problem.y1[t] - (0..j).map(|c| problem.y0[(t, c)] * weights[c]).sum::<f64>())
        .collect();
    let pre_mspe = pre_loss(&weights) / problem.z1.len() as f64;
    let point = if gaps.is_empty() {
        0.0
    } else {
        gaps.iter().sum::<f64>() / gaps.len() as f64
    };
    let estimate = CausalEstimate::ate("synthetic_control", 1.0, 0.0, point, j + 1)
        .with_diagnostic("pre_mspe", pre_mspe)
        .with_diagnostic("donors_used", weights.iter().filter(|&&w| w > 1e-8).count() as f64);
    Ok(ScFit {
        weights,
        v,
        gaps,
        pre_mspe,
        estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_feasible(w: &[f64]) {
        assert!(w.iter().all(|&x| x >= -1e-10));
        assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-8);
    }

    #[test]
    fn single_donor() {
        let w = sc_weights(&[3.0], &DMatrix::from_row_slice(1, 1, &[1.0]), &[1.0]).unwrap();
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn midpoint_matches_grid_oracle() {
        let x0 = DMatrix::from_row_slice(1, 2, &[1.0, 3.0]);
        let w = sc_weights(&[2.0], &x0, &[1.0]).unwrap();
        assert_feasible(&w);
        // grid search over the one-dimensional simplex at step 1e-3
        let (mut best, mut best_val) = (0.0, f64::INFINITY);
        for i in 0..=1000 {
            let a = i as f64 / 1000.0;
            let val = weighted_loss(&[2.0], &x0, &[1.0], &[a, 1.0 - a]);
            if val < best_val {
                best_val = val;
                best = a;
            }
        }
        assert!((w[0] - best).abs() <= 1e-3);
        assert!((w[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn exact_match_prefers_lowest_index() {
        let x0 = DMatrix::from_row_slice(2, 3, &[1.0, 5.0, 5.0, 2.0, 7.0, 7.0]);
        let w = sc_weights(&[5.0, 7.0], &x0, &[1.0, 1.0]).unwrap();
        assert_eq!(w, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn projection_lands_on_simplex() {
        for v in [vec![0.2, 0.3, 0.5], vec![5.0, -1.0, 0.0], vec![-3.0, -3.0]] {
            assert_feasible(&project_simplex(&v));
        }
        assert_eq!(project_simplex(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
    }

    #[test]
    fn weights_beat_every_vertex() {
        let x0 = DMatrix::from_row_slice(3, 4, &[
            1.0, 4.0, 2.0, 0.5, //
            3.0, 1.0, 2.5, 2.0, //
            0.0, 2.0, 1.0, 3.0,
        ]);
        let x1 = [2.2, 2.0, 1.1];
        let v = [0.5, 0.3, 0.2];
        let w = sc_weights(&x1, &x0, &v).unwrap();
        assert_feasible(&w);
        let f = weighted_loss(&x1, &x0, &v, &w);
        for c in 0..4 {
            assert!(f <= weighted_loss(&x1, &x0, &v, &one_hot(c, 4)) + 1e-12);
        }
    }

    fn convex_problem() -> (ScProblem, Vec<f64>) {
        let truth = vec![0.3, 0.7, 0.0];
        let x0 = DMatrix::from_row_slice(3, 3, &[1.0, 4.0, 9.0, 2.0, 0.0, 5.0, 7.0, 3.0, 1.0]);
        let z0 = DMatrix::from_row_slice(4, 3, &[
            1.0, 2.0, 8.0, //
            2.0, 3.0, 1.0, //
            3.0, 5.0, 2.0, //
            4.0, 4.0, 6.0,
        ]);
        let y0 = DMatrix::from_row_slice(2, 3, &[5.0, 6.0, 1.0, 6.0, 8.0, 2.0]);
        let combine = |m: &DMatrix<f64>| -> Vec<f64> {
            (0..m.nrows())
                .map(|r| (0..3).map(|c| m[(r, c)] * truth[c]).sum())
                .collect()
        };
        let problem = ScProblem {
            x1: combine(&x0),
            z1: combine(&z0),
            y1: combine(&y0).iter().map(|v| v + 2.0).collect(),
            x0,
            z0,
            y0,
        };
        (problem, truth)
    }

    #[test]
    fn recovers_convex_combination() {
        let (problem, truth) = convex_problem();
        let fit = sc_fit(&problem).unwrap();
        for (a, b) in fit.weights.iter().zip(&truth) {
            assert!((a - b).abs() < 1e-3, "{:?}", fit.weights);
        }
        assert!((fit.estimate.point - 2.0).abs() < 1e-2);
        assert!((fit.v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn donor_permutation_permutes_weights() {
        let (problem, _) = convex_problem();
        let perm = [2usize, 0, 1];
        let reorder = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), 3, |r, c| m[(r, perm[c])]);
        let permuted = ScProblem {
            x0: reorder(&problem.x0),
            z0: reorder(&problem.z0),
            y0: reorder(&problem.y0),
            ..problem.clone()
        };
        let a = sc_fit(&problem).unwrap();
        let b = sc_fit(&permuted).unwrap();
        for c in 0..3 {
            assert!((b.weights[c] - a.weights[perm[c]]).abs() < 1e-4);
        }
        for (ga, gb) in a.gaps.iter().zip(&b.gaps) {
            assert!((ga - gb).abs() < 1e-3);
        }
    }

    #[test]
    fn perfect_donor_gap() {
        let x0 = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 0.0]);
        let z0 = DMatrix::from_row_slice(3, 2, &[1.0, 4.0, 2.0, 5.0, 3.0, 7.0]);
        let y0 = DMatrix::from_row_slice(2, 2, &[3.0, 9.0, 4.0, 8.0]);
        let problem = ScProblem {
            x1: vec![3.0, 0.0],
            x0,
            z1: vec![4.0, 5.0, 7.0],
            z0,
            y1: vec![10.0, 10.0],
            y0,
        };
        let fit = sc_fit(&problem).unwrap();
        assert_eq!(fit.weights, vec![0.0, 1.0]);
        assert_eq!(fit.gaps, vec![1.0, 2.0]);
    }

    #[test]
    fn identical_donors_are_degenerate() {
        let col = |v: &[f64]| DMatrix::from_fn(v.len(), 2, |r, _| v[r]);
        let problem = ScProblem {
            x1: vec![1.0],
            x0: col(&[2.0]),
            z1: vec![1.0, 2.0],
            z0: col(&[3.0, 4.0]),
            y1: vec![1.0],
            y0: col(&[1.0]),
        };
        assert_eq!(sc_fit(&problem).unwrap_err(), CausalError::DegenerateProblem);
    }
}
