use causal_core::estimators::{ate_dr, ate_ipw, ate_or, OrSpec};
use causal_core::propensity::{estimate_propensity_binary, PropensityFit};
use causal_core::simulate::{run_monte_carlo, CaseId, DgpSpec, MonteCarloOptions};
use causal_core::{difference_in_means, validate, RawColumns};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn or_ipw_dr_agree_under_randomization() {
    let n = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let x: DMatrix<f64> = DMatrix::from_fn(n, 1, |_, _| StandardNormal.sample(&mut rng));
    let d: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() < 0.4) as u8 as f64).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let e: f64 = StandardNormal.sample(&mut rng);
            2.0 + 1.5 * d[i] + x[(i, 0)] + e
        })
        .collect();
    let ds = validate(RawColumns::new(y, d, x)).unwrap();
    let share = ds.d().iter().sum::<f64>() / n as f64;
    let constant = PropensityFit::from_scores(vec![share; n]).unwrap();
    let or = ate_or(&ds, &OrSpec::default(), 1.0, 0.0).unwrap().point;
    let ipw = ate_ipw(&ds, &constant, 1.0, 0.0).unwrap().point;
    let dr = ate_dr(&ds, &OrSpec::default(), &estimate_propensity_binary(&ds).unwrap(), 1.0, 0.0)
        .unwrap()
        .point;
    for v in [or, ipw, dr] {
        assert!((v - 1.5).abs() < 0.1, "{or} {ipw} {dr}");
    }
    assert!((or - ipw).abs() < 0.1 && (or - dr).abs() < 0.1);
    let dim = difference_in_means(&ds).unwrap().point;
    let saturated = ate_or(&ds, &OrSpec::treatment_only(), 1.0, 0.0).unwrap().point;
    assert!((dim - saturated).abs() < 1e-12);
}

#[test]
fn double_robustness_over_case_one_replications() {
    let spec = DgpSpec::new(CaseId::Cs1, 1000).unwrap();
    let methods: Vec<String> = ["DR1", "DR2", "OR2"].iter().map(|s| s.to_string()).collect();
    let report = run_monte_carlo(&spec, &methods, MonteCarloOptions { runs: 200, seed: 11, jobs: None }).unwrap();
    let m = |k: &str| report.row(k).unwrap().av_est;
    assert!((m("DR1") + 5.0).abs() < 0.15, "DR1 {}", m("DR1"));
    assert!((m("DR2") + 5.0).abs() < 0.15, "DR2 {}", m("DR2"));
    assert!((m("OR2") + 5.0).abs() > 1.0, "OR2 {}", m("OR2"));
}
