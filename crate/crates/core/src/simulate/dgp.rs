//! Data-generating processes for the six simulation case studies.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{validate, ObservationalDataset, PanelDataset, RawColumns};
use crate::error::{CausalError, Result};
use crate::quasi::DidDataset;
use crate::regress::expit;
use crate::simulate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CaseId {
    /// Binary treatment under strong ignorability.
    Cs1,
    /// Panel with time-invariant confounding.
    Cs2,
    /// Panel with time-varying confounding.
    Cs3,
    /// Continuous treatment with an instrument.
    Cs4,
    /// Two-period difference-in-differences.
    Cs5,
    /// Regression discontinuity.
    Cs6,
}

impl CaseId {
    pub const ALL: [CaseId; 6] = [
        CaseId::Cs1,
        CaseId::Cs2,
        CaseId::Cs3,
        CaseId::Cs4,
        CaseId::Cs5,
        CaseId::Cs6,
    ];

    pub fn index(self) -> u64 {
        self as u64 + 1
    }

    /// Name of the shipped reference table for this case.
    pub fn table(self) -> &'static str {
        match self {
            CaseId::Cs1 => "table2",
            CaseId::Cs2 => "table3",
            CaseId::Cs3 => "table4",
            CaseId::Cs4 => "table5",
            CaseId::Cs5 => "table6",
            CaseId::Cs6 => "table7",
        }
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cs{}", self.index())
    }
}

impl FromStr for CaseId {
    type Err = CausalError;

    fn from_str(s: &str) -> Result<Self> {
        CaseId::ALL
            .into_iter()
            .find(|c| c.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| CausalError::UnknownCase(s.to_string()))
    }
}

/// Optional modifications of a case's base design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
pub enum Variant {
    #[default]
    Base,
    /// Case 5: a covariate shifts only the control group's post-period outcome.
    TrendViolation,
    /// Case 6: compliance is imperfect near the cutoff.
    Fuzzy,
}

fn defaults(case: CaseId) -> BTreeMap<String, f64> {
    let pairs: &[(&str, f64)] = match case {
        CaseId::Cs1 => &[
            ("alpha0", 2.0),
            ("alpha1", 0.5),
            ("beta0", 10.0),
            ("beta1", 0.5),
            ("tau", -5.0),
            ("x_mean", 0.0),
            ("x_spread", 10.0),
            ("x_spread_is_variance", 1.0),
            ("y_var", 5.0),
            ("ps_bad_sd", 0.5),
            ("ps_bad_lo", 0.01),
            ("ps_bad_hi", 0.99),
        ],
        CaseId::Cs2 => &[
            ("alpha", 1.0),
            ("tau", 0.0),
            ("delta", 2.0),
            ("gamma", 2.0),
            ("w_lo", 1.0),
            ("w_hi", 100.0),
            ("mu_d", 0.0),
            ("sigma_d", 4.8),
            ("sigma_e", 8.6),
            ("periods", 5.0),
        ],
        CaseId::Cs3 => &[
            ("alpha", 1.0),
            ("tau", 0.0),
            ("delta", 2.0),
            ("gamma", 2.0),
            ("w_lo", 1.0),
            ("w_hi", 100.0),
            ("mu_w", 0.0),
            ("sigma_w", 5.0),
            ("mu_d", 0.0),
            ("sigma_d", 4.8),
            ("sigma_e", 8.6),
            ("periods", 5.0),
        ],
        CaseId::Cs4 => &[
            ("x_mean", 15.0),
            ("x_sd", 1.0),
            ("z_sd", 1.0),
            ("alpha0", 1.0),
            ("alpha1", 0.5),
            ("alpha2", 1.0),
            ("sigma_d", 0.0),
            ("beta0", 1.0),
            ("beta1", 0.5),
            ("tau", -1.0),
            ("sigma_y", 1.0),
            ("bad_instrument_loading", 2.0),
        ],
        CaseId::Cs5 => &[
            ("alpha", 1.0),
            ("beta_d0", 0.0),
            ("beta_d1", 2.0),
            ("beta_x0", 1.0),
            ("tau", -4.0),
            ("sigma_y0", 1.0),
            ("sigma_y1", 1.0),
            ("x1_mean", 1.0),
            ("x1_sd", 1.0),
            ("beta_x1", 1.0),
        ],
        CaseId::Cs6 => &[
            ("alpha", 1.0),
            ("beta", 2.0),
            ("tau", 5.0),
            ("cutoff", 0.0),
            ("t_lo", -1.0),
            ("t_hi", 1.0),
            ("sigma_y", 1.0),
            ("fuzzy_band", 0.25),
            ("fuzzy_share", 0.25),
        ],
    };
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// A case study at a given sample size with its parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub case: CaseId,
    pub n: usize,
    pub params: BTreeMap<String, f64>,
}

impl DgpSpec {
    pub fn new(case: CaseId, n: usize) -> Result<Self> {
        if n < 10 {
            return Err(CausalError::InvalidArgument("sample size must be at least 10".into()));
        }
        Ok(Self {
            case,
            n,
            params: defaults(case),
        })
    }

    /// Override one parameter; unknown names are rejected.
    pub fn with_param(mut self, name: &str, value: f64) -> Result<Self> {
        match self.params.get_mut(name) {
            Some(slot) if value.is_finite() => {
                *slot = value;
                Ok(self)
            }
            Some(_) => Err(CausalError::InvalidArgument(format!("parameter {name} must be finite"))),
            None => Err(CausalError::InvalidArgument(format!(
                "case {} has no parameter {name}",
                self.case
            ))),
        }
    }

    pub fn param(&self, name: &str) -> f64 {
        self.params[name]
    }

    /// True average treatment effect of the design.
    pub fn true_tau(&self) -> f64 {
        self.param("tau")
    }
}

/// One simulated dataset.
#[derive(Debug, Clone)]
pub enum SimData {
    /// Cross-section; `bad_scores` carries the randomly drawn propensity
    /// scores used as the misspecified model in case 1.
    Cross {
        ds: ObservationalDataset,
        bad_scores: Option<Vec<f64>>,
    },
    Panel(PanelDataset),
    Did(DidDataset),
    Rdd {
        y: Vec<f64>,
        t: Vec<f64>,
        d: Vec<f64>,
        cutoff: f64,
    },
}

struct Draws {
    seed: u64,
    case: u64,
    run: u64,
}

impl Draws {
    fn rng(&self, variable: u64) -> ChaCha8Rng {
        stream(&[self.seed, self.case, self.run, variable])
    }

    fn normal(&self, variable: u64, n: usize, mean: f64, sd: f64) -> Vec<f64> {
        if sd == 0.0 {
            return vec![mean; n];
        }
        let dist = Normal::new(mean, sd).expect("finite normal parameters");
        let mut rng = self.rng(variable);
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    }

    fn uniform(&self, variable: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        let dist = Uniform::new(lo, hi).expect("valid uniform range");
        let mut rng = self.rng(variable);
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    }
}

fn sd_of_variance(v: f64) -> Result<f64> {
    if v < 0.0 {
        return Err(CausalError::InvalidArgument("variance parameter must be non-negative".into()));
    }
    Ok(v.sqrt())
}

/// Draw the dataset for run `run` of the case (and variant) from streams
/// keyed by `(seed, case, run, variable)`.
pub fn generate(spec: &DgpSpec, variant: Variant, seed: u64, run: u64) -> Result<SimData> {
    let draws = Draws {
        seed,
        case: spec.case.index(),
        run,
    };
    let p = |k: &str| spec.param(k);
    let n = spec.n;
    match (spec.case, variant) {
        (CaseId::Cs1, Variant::Base) => {
            let x_sd = if p("x_spread_is_variance") != 0.0 {
                sd_of_variance(p("x_spread"))?
            } else {
                p("x_spread")
            };
            let x = draws.normal(1, n, p("x_mean"), x_sd);
            let true_ps: Vec<f64> = x.iter().map(|&v| expit(p("alpha0") + p("alpha1") * v)).collect();
            let mut rng = draws.rng(2);
            let d: Vec<f64> = true_ps
                .iter()
                .map(|&pi| Bernoulli::new(pi).expect("probability in [0, 1]").sample(&mut rng) as u8 as f64)
                .collect();
            let noise = draws.normal(3, n, 0.0, sd_of_variance(p("y_var"))?);
            let y: Vec<f64> = (0..n)
                .map(|i| p("beta0") + p("tau") * d[i] + p("beta1") * x[i] + noise[i])
                .collect();

            // misspecified scores: normal around the sample mean of the true
            // score, redrawn until they land inside the truncation bounds
            let pi_bar = true_ps.iter().sum::<f64>() / n as f64;
            let (lo, hi) = (p("ps_bad_lo"), p("ps_bad_hi"));
            if !(0.0 < lo && lo < hi && hi < 1.0) {
                return Err(CausalError::InvalidArgument("truncation bounds must satisfy 0 < lo < hi < 1".into()));
            }
            let dist = Normal::new(pi_bar, p("ps_bad_sd"))
                .map_err(|e| CausalError::InvalidArgument(e.to_string()))?;
            let mut rng = draws.rng(4);
            let mut bad = Vec::with_capacity(n);
            for _ in 0..n {
                let mut tries = 0;
                let v = loop {
                    let v: f64 = dist.sample(&mut rng);
                    tries += 1;
                    if (lo..=hi).contains(&v) {
                        break v;
                    }
                    if tries > 10_000 {
                        break v.clamp(lo, hi);
                    }
                };
                bad.push(v);
            }
            let ds = validate(RawColumns::new(y, d, DMatrix::from_column_slice(n, 1, &x)))?;
            Ok(SimData::Cross {
                ds,
                bad_scores: Some(bad),
            })
        }
        (CaseId::Cs2 | CaseId::Cs3, Variant::Base) => {
            let periods = p("periods").round() as usize;
            if periods < 2 {
                return Err(CausalError::InvalidArgument("panel needs at least two periods".into()));
            }
            let units = (n / periods).max(2);
            let rows = units * periods;
            let w_unit = draws.uniform(1, units, p("w_lo"), p("w_hi"));
            let w: Vec<f64> = if spec.case == CaseId::Cs3 {
                let shock = draws.normal(4, rows, p("mu_w"), p("sigma_w"));
                (0..rows).map(|r| w_unit[r / periods] + shock[r]).collect()
            } else {
                (0..rows).map(|r| w_unit[r / periods]).collect()
            };
            let ud = draws.normal(2, rows, p("mu_d"), p("sigma_d"));
            let ue = draws.normal(3, rows, 0.0, p("sigma_e"));
            let d: Vec<f64> = (0..rows).map(|r| p("delta") * w[r] + ud[r]).collect();
            let y: Vec<f64> = (0..rows)
                .map(|r| p("alpha") + p("tau") * d[r] + p("gamma") * w[r] + ue[r])
                .collect();
            let unit = (0..rows).map(|r| (r / periods) as i64).collect();
            let time = (0..rows).map(|r| (r % periods) as i64).collect();
            Ok(SimData::Panel(PanelDataset::new(unit, time, y, d, DMatrix::zeros(rows, 0))?))
        }
        (CaseId::Cs4, Variant::Base) => {
            let x = draws.normal(1, n, p("x_mean"), p("x_sd"));
            let z = draws.normal(2, n, 0.0, p("z_sd"));
            let ud = draws.normal(3, n, 0.0, p("sigma_d"));
            let uy = draws.normal(4, n, 0.0, p("sigma_y"));
            let d: Vec<f64> = (0..n)
                .map(|i| p("alpha0") + p("alpha1") * x[i] + p("alpha2") * z[i] + ud[i])
                .collect();
            let y: Vec<f64> = (0..n)
                .map(|i| p("beta0") + p("tau") * d[i] + p("beta1") * x[i] + uy[i])
                .collect();
            // invalid instrument: loads on the confounder
            let z_bad: Vec<f64> = (0..n)
                .map(|i| z[i] + p("bad_instrument_loading") * (x[i] - p("x_mean")))
                .collect();
            let zs = DMatrix::from_fn(n, 2, |i, j| if j == 0 { z[i] } else { z_bad[i] });
            let raw = RawColumns::new(y, d, DMatrix::from_column_slice(n, 1, &x)).with_instruments(zs);
            Ok(SimData::Cross {
                ds: validate(raw)?,
                bad_scores: None,
            })
        }
        (CaseId::Cs5, Variant::Base | Variant::TrendViolation) => {
            let x0 = draws.normal(1, n, 0.0, 1.0);
            let mut rng = draws.rng(2);
            let d1: Vec<f64> = x0
                .iter()
                .map(|&v| Bernoulli::new(expit(p("alpha") * v)).expect("probability").sample(&mut rng) as u8 as f64)
                .collect();
            let e0 = draws.normal(3, n, 0.0, p("sigma_y0"));
            let e1 = draws.normal(4, n, 0.0, p("sigma_y1"));
            let x1 = draws.normal(5, n, p("x1_mean"), p("x1_sd"));
            let violation = variant == Variant::TrendViolation;
            let mut y = Vec::with_capacity(2 * n);
            for i in 0..n {
                y.push(p("beta_d0") + d1[i] + p("beta_x0") * x0[i] + e0[i]);
            }
            for i in 0..n {
                let extra = if violation { p("beta_x1") * x1[i] * (1.0 - d1[i]) } else { 0.0 };
                y.push(p("beta_d1") + d1[i] + p("tau") * d1[i] + p("beta_x0") * x0[i] + extra + e1[i]);
            }
            let group: Vec<i64> = d1.iter().chain(&d1).map(|&v| v as i64).collect();
            let period: Vec<i64> = (0..2 * n).map(|r| (r >= n) as i64).collect();
            let xcol: Vec<f64> = x0.iter().chain(&x0).copied().collect();
            let dd = DidDataset::new(y, group, period)?
                .with_covariates(DMatrix::from_column_slice(2 * n, 1, &xcol))?;
            Ok(SimData::Did(dd))
        }
        (CaseId::Cs6, Variant::Base | Variant::Fuzzy) => {
            let c = p("cutoff");
            let t = draws.uniform(1, n, p("t_lo"), p("t_hi"));
            let noise = draws.normal(2, n, 0.0, p("sigma_y"));
            let mut d: Vec<f64> = t.iter().map(|&v| (v >= c) as u8 as f64).collect();
            if variant == Variant::Fuzzy {
                let mut rng = draws.rng(3);
                let share = p("fuzzy_share");
                for i in 0..n {
                    let flip = rng.random::<f64>() < share;
                    if (t[i] - c).abs() < p("fuzzy_band") && flip {
                        d[i] = 1.0 - d[i];
                    }
                }
            }
            let y = (0..n)
                .map(|i| p("alpha") + p("beta") * t[i] + p("tau") * d[i] + noise[i])
                .collect();
            Ok(SimData::Rdd { y, t, d, cutoff: c })
        }
        (case, variant) => Err(CausalError::InvalidArgument(format!(
            "case {case} has no {variant:?} variant"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress;

    #[test]
    fn case_ids_round_trip() {
        for c in CaseId::ALL {
            assert_eq!(c.to_string().parse::<CaseId>().unwrap(), c);
        }
        assert_eq!("CS4".parse::<CaseId>().unwrap(), CaseId::Cs4);
        assert_eq!("cs9".parse::<CaseId>().unwrap_err(), CausalError::UnknownCase("cs9".into()));
    }

    #[test]
    fn unknown_parameter_rejected() {
        let spec = DgpSpec::new(CaseId::Cs1, 100).unwrap();
        assert!(spec.clone().with_param("tau", -2.0).is_ok());
        assert!(spec.with_param("nope", 1.0).is_err());
        assert!(DgpSpec::new(CaseId::Cs1, 5).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = DgpSpec::new(CaseId::Cs1, 200).unwrap();
        let a = generate(&spec, Variant::Base, 42, 3).unwrap();
        let b = generate(&spec, Variant::Base, 42, 3).unwrap();
        let c = generate(&spec, Variant::Base, 42, 4).unwrap();
        match (a, b, c) {
            (SimData::Cross { ds: a, .. }, SimData::Cross { ds: b, .. }, SimData::Cross { ds: c, .. }) => {
                assert_eq!(a, b);
                assert_ne!(a.y(), c.y());
            }
            _ => panic!("case 1 yields a cross-section"),
        }
    }

    #[test]
    fn case1_regression_recovers_parameters() {
        let spec = DgpSpec::new(CaseId::Cs1, 1000).unwrap();
        let SimData::Cross { ds, bad_scores } = generate(&spec, Variant::Base, 42, 0).unwrap() else {
            panic!("cross-section expected");
        };
        let treated = ds.d().iter().sum::<f64>() / ds.n() as f64;
        assert!(treated > 0.0 && treated < 1.0);
        let design = regress::design_from_columns(ds.n(), &[&vec![1.0; ds.n()], ds.d(), &ds.x().column(0).iter().copied().collect::<Vec<_>>()]);
        let fit = regress::fit_ols(&design, ds.y(), None).unwrap();
        assert!((fit.coef[1] + 5.0).abs() < 0.5);
        assert!((fit.coef[2] - 0.5).abs() < 0.1);
        let bad = bad_scores.unwrap();
        assert!(bad.iter().all(|&s| (0.01..=0.99).contains(&s)));
    }

    #[test]
    fn case2_has_within_variation() {
        let spec = DgpSpec::new(CaseId::Cs2, 100).unwrap();
        for run in 0..100 {
            let SimData::Panel(p) = generate(&spec, Variant::Base, 1, run).unwrap() else {
                panic!("panel expected");
            };
            assert_eq!(p.n_units(), 20);
            let varies = p.groups().iter().any(|rows| rows.iter().any(|&r| p.d()[r] != p.d()[rows[0]]));
            assert!(varies);
        }
    }

    #[test]
    fn variants_share_base_draws() {
        let spec = DgpSpec::new(CaseId::Cs6, 300).unwrap();
        let (SimData::Rdd { t: t0, d: d0, .. }, SimData::Rdd { t: t1, d: d1, .. }) = (
            generate(&spec, Variant::Base, 9, 0).unwrap(),
            generate(&spec, Variant::Fuzzy, 9, 0).unwrap(),
        ) else {
            panic!("rdd expected");
        };
        assert_eq!(t0, t1);
        let flipped = d0.iter().zip(&d1).filter(|(a, b)| a != b).count();
        assert!(flipped > 0);
        for i in 0..300 {
            if d0[i] != d1[i] {
                assert!(t0[i].abs() < 0.25);
            }
        }
        assert!(generate(&spec, Variant::TrendViolation, 9, 0).is_err());
    }
}
