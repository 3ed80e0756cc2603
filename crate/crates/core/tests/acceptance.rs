//! Acceptance suite: every criterion runs at desk scale (1000 runs, n = 1000)
//! and prints one PASS/FAIL line. Runs with a custom harness so the lines are
//! always visible under `cargo test`.

use std::path::PathBuf;
use std::time::Instant;

use causal_core::propensity::{balance_diagnostic, estimate_propensity_binary};
use causal_core::quasi::{iv_ratio, rdd_sharp, sc_weights, two_stage_least_squares, RddSpec};
use causal_core::regress::{expit, fit_ols, with_intercept};
use causal_core::simulate::{
    calibrate_cs1_spread, case_methods, compare_to_reference, run_monte_carlo, CaseId, DgpSpec,
    MonteCarloOptions, MonteCarloReport, ReferenceTable, Tolerances, Verdict,
};
use causal_core::variance::{bootstrap_variance, ArmModels};
use causal_core::{validate, ObservationalDataset, RawColumns};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const RUNS: usize = 1000;
const N: usize = 1000;
const SEED: u64 = 42;
const MSE_TOL: f64 = 1e-9;

struct Outcome {
    pass: bool,
    detail: String,
}

fn reference_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("reference")
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn all_methods(case: CaseId) -> Vec<String> {
    case_methods(case).iter().map(|s| s.to_string()).collect()
}

fn simulate(spec: &DgpSpec) -> MonteCarloReport {
    let opts = MonteCarloOptions { runs: RUNS, seed: SEED, jobs: None };
    run_monte_carlo(spec, &all_methods(spec.case), opts).expect("monte carlo run")
}

/// Check a report against its shipped table and tolerance file.
fn table_check(report: &MonteCarloReport) -> (Vec<Verdict>, bool) {
    let table = report.case.table();
    let dir = reference_dir();
    let reference = ReferenceTable::from_path(&dir.join(format!("{table}.csv"))).unwrap();
    let tol = Tolerances::from_path(&dir.join(format!("{table}_tol.json"))).unwrap();
    let verdicts = compare_to_reference(report, &reference, &tol).unwrap();
    let pass = verdicts.iter().all(|v| v.pass);
    (verdicts, pass)
}

fn summarize(report: &MonteCarloReport, verdicts: &[Verdict]) -> String {
    let means: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("{}={:.3}/{:.4}", r.method, r.av_est, r.emp_var))
        .collect();
    let failed: Vec<String> = verdicts
        .iter()
        .filter(|v| !v.pass)
        .map(|v| format!("{}.{} {}", v.method, v.column, v.rule))
        .collect();
    if failed.is_empty() {
        means.join(" ")
    } else {
        format!("{} | failing: {}", means.join(" "), failed.join("; "))
    }
}

fn criterion_1(reports: &mut Vec<MonteCarloReport>) -> Outcome {
    let cal = calibrate_cs1_spread(N, 200, SEED, -3.149).unwrap();
    let is_var = if cal.chosen == "variance" { 1.0 } else { 0.0 };
    let spec = DgpSpec::new(CaseId::Cs1, N)
        .unwrap()
        .with_param("x_spread_is_variance", is_var)
        .unwrap();
    let report = simulate(&spec);
    let (verdicts, pass) = table_check(&report);
    let detail = format!(
        "spread read as {} (OR2 {:.3} vs {:.3}); {}",
        cal.chosen,
        cal.mean_if_variance,
        cal.mean_if_sd,
        summarize(&report, &verdicts)
    );
    reports.push(report);
    Outcome { pass, detail }
}

fn criterion_2(reports: &mut Vec<MonteCarloReport>) -> Outcome {
    let cs2 = simulate(&DgpSpec::new(CaseId::Cs2, N).unwrap());
    let cs3 = simulate(&DgpSpec::new(CaseId::Cs3, N).unwrap());
    let (v2, p2) = table_check(&cs2);
    let (v3, p3) = table_check(&cs3);
    let fe = cs2.estimates_of("FE").unwrap();
    let cre = cs2.estimates_of("CRE").unwrap();
    let max_gap = fe.iter().zip(&cre).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let detail = format!(
        "CS2 {} ; CS3 {} ; max |FE-CRE| = {max_gap:.2e}",
        summarize(&cs2, &v2),
        summarize(&cs3, &v3)
    );
    let pass = p2 && p3 && max_gap <= 1e-6 && fe.len() == RUNS;
    reports.push(cs2);
    reports.push(cs3);
    Outcome { pass, detail }
}

fn table_criterion(case: CaseId, reports: &mut Vec<MonteCarloReport>) -> Outcome {
    let report = simulate(&DgpSpec::new(case, N).unwrap());
    let (verdicts, pass) = table_check(&report);
    let detail = summarize(&report, &verdicts);
    reports.push(report);
    Outcome { pass, detail }
}

/// Balancing: stratifying on the estimated score shrinks imbalance.
fn balancing() -> (bool, String) {
    let reps = 100;
    let n = 10_000;
    let mut wins = 0;
    for rep in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + rep);
        let x = DMatrix::from_fn(n, 2, |_, _| normal(&mut rng));
        let d: Vec<f64> = (0..n)
            .map(|i| {
                let p = expit(0.3 + 0.8 * x[(i, 0)] - 0.5 * x[(i, 1)]);
                (rng.random::<f64>() < p) as u8 as f64
            })
            .collect();
        let y: Vec<f64> = (0..n).map(|i| d[i] + x[(i, 0)] + normal(&mut rng)).collect();
        let ds = validate(RawColumns::new(y, d, x)).unwrap();
        let ps = estimate_propensity_binary(&ds).unwrap();
        let table = balance_diagnostic(&ds, &ps, 5).unwrap();
        if table
            .covariates
            .iter()
            .all(|c| c.stratified_smd.is_some_and(|s| s < c.overall_smd))
        {
            wins += 1;
        }
    }
    let share = wins as f64 / reps as f64;
    (share >= 0.95, format!("balancing {wins}/{reps}"))
}

/// Double robustness on 200 replications of case 1.
fn double_robustness() -> (bool, String) {
    let spec = DgpSpec::new(CaseId::Cs1, N).unwrap();
    let methods: Vec<String> = ["DR1", "DR2", "OR2"].iter().map(|s| s.to_string()).collect();
    let r = run_monte_carlo(&spec, &methods, MonteCarloOptions { runs: 200, seed: 7, jobs: None }).unwrap();
    let m = |k: &str| r.row(k).unwrap().av_est;
    let pass = (m("DR1") + 5.0).abs() < 0.15 && (m("DR2") + 5.0).abs() < 0.15 && (m("OR2") + 5.0).abs() > 1.0;
    (
        pass,
        format!("DR1 {:.3} DR2 {:.3} OR2 {:.3}", m("DR1"), m("DR2"), m("OR2")),
    )
}

fn iv_identities() -> (bool, String) {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 300;
        let z: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let u: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let d: Vec<f64> = (0..n).map(|i| 0.7 * z[i] + u[i] + 0.3 * normal(&mut rng)).collect();
        let y: Vec<f64> = (0..n).map(|i| 2.0 - d[i] + u[i] + normal(&mut rng)).collect();
        let dm = DMatrix::from_column_slice(n, 1, &d);
        let zm = DMatrix::from_column_slice(n, 1, &z);
        let ones = DMatrix::from_element(n, 1, 1.0);

        let tsls = two_stage_least_squares(&y, &dm, &ones, &zm).unwrap();
        let ratio = iv_ratio(&y, &d, &z).unwrap();
        worst = worst.max((tsls.coef[0] - ratio.point).abs());

        let self_inst = two_stage_least_squares(&y, &dm, &ones, &dm).unwrap();
        let ols = fit_ols(&with_intercept(&dm), &y, None).unwrap();
        worst = worst.max((self_inst.coef[0] - ols.coef[1]).abs());
        worst = worst.max((self_inst.coef[1] - ols.coef[0]).abs());
    }
    (worst <= 1e-10, format!("2SLS identities max gap {worst:.1e}"))
}

fn sc_oracle() -> (bool, String) {
    let mut worst_w: f64 = 0.0;
    let mut feasible = true;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let k = 3;
        let x0 = DMatrix::from_fn(k, 2, |_, _| normal(&mut rng));
        let x1: Vec<f64> = (0..k).map(|_| normal(&mut rng)).collect();
        let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let w = sc_weights(&x1, &x0, &v).unwrap();
        feasible &= w.iter().all(|&x| x >= -1e-10) && (w.iter().sum::<f64>() - 1.0).abs() <= 1e-8;
        let loss = |a: f64| {
            (0..k)
                .map(|r| v[r] * (x1[r] - a * x0[(r, 0)] - (1.0 - a) * x0[(r, 1)]).powi(2))
                .sum::<f64>()
        };
        let best = (0..=1000)
            .map(|i| i as f64 / 1000.0)
            .min_by(|a, b| loss(*a).total_cmp(&loss(*b)))
            .unwrap();
        worst_w = worst_w.max((w[0] - best).abs());
    }
    (
        feasible && worst_w <= 1e-3 + 1e-9,
        format!("SC feasible={feasible} max |w-grid| {worst_w:.1e}"),
    )
}

fn rdd_noiseless() -> (bool, String) {
    let n = 400;
    let t: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / n as f64).collect();
    let y: Vec<f64> = t.iter().map(|&v| 1.0 + 2.0 * v + 5.0 * (v >= 0.0) as u8 as f64).collect();
    let est = rdd_sharp(&y, &t, 0.0, &RddSpec::default()).unwrap();
    let gap = (est.point - 5.0).abs();
    (gap <= 1e-9, format!("sharp RDD gap {gap:.1e}"))
}

fn mean_ds(n: usize, seed: u64) -> ObservationalDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y: Vec<f64> = (0..n).map(|_| 3.0 + 2.0 * normal(&mut rng)).collect();
    let d: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
    validate(RawColumns::new(y, d, DMatrix::zeros(n, 0))).unwrap()
}

fn bootstrap_vs_closed_form() -> (bool, String) {
    let ds = mean_ds(500, 11);
    let n = ds.n() as f64;
    let mean = ds.y().iter().sum::<f64>() / n;
    let s2 = ds.y().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let closed = s2 / n;
    let boot = bootstrap_variance(|d: &ObservationalDataset| Ok(d.y().iter().sum::<f64>() / d.n() as f64), &ds, 2000, SEED)
        .unwrap();
    let rel = (boot.variance - closed).abs() / closed;
    (rel <= 0.15, format!("bootstrap/closed-form rel gap {rel:.3}"))
}

fn delta_gradients() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 400;
    let x = DMatrix::from_fn(n, 2, |_, _| normal(&mut rng));
    let d: Vec<f64> = (0..n).map(|i| (expit(x[(i, 0)]) > rng.random::<f64>()) as u8 as f64).collect();
    let y: Vec<f64> = (0..n).map(|i| d[i] + x[(i, 0)] + x[(i, 1)] + normal(&mut rng)).collect();
    let ds = validate(RawColumns::new(y, d, x)).unwrap();
    let arms = ArmModels::fit(&ds, None).unwrap();
    let (g1, g0) = arms.mean_gradients(&ds);
    let tau = |a: &ArmModels| a.contrasts(&ds).iter().sum::<f64>() / n as f64;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for k in 0..g1.len() {
        let (mut up, mut dn) = (arms.clone(), arms.clone());
        up.treated.coef[k] += h;
        dn.treated.coef[k] -= h;
        worst = worst.max(((tau(&up) - tau(&dn)) / (2.0 * h) - g1[k]).abs());
        let (mut up, mut dn) = (arms.clone(), arms.clone());
        up.control.coef[k] += h;
        dn.control.coef[k] -= h;
        worst = worst.max(((tau(&up) - tau(&dn)) / (2.0 * h) + g0[k]).abs());
    }
    (worst <= 1e-5, format!("delta gradient max gap {worst:.1e}"))
}

fn mse_identity(reports: &[MonteCarloReport]) -> (bool, String) {
    let mut worst: f64 = 0.0;
    for r in reports {
        for row in &r.rows {
            let bias = row.av_est - r.true_tau;
            worst = worst.max((row.mse - (row.emp_var + bias * bias)).abs());
        }
    }
    (worst <= MSE_TOL, format!("MSE identity over {} reports, max gap {worst:.1e}", reports.len()))
}

fn thread_determinism() -> (bool, String) {
    let mut same = true;
    for case in CaseId::ALL {
        let spec = DgpSpec::new(case, N).unwrap();
        let one = MonteCarloOptions { runs: 40, seed: SEED, jobs: Some(1) };
        let many = MonteCarloOptions { jobs: Some(8), ..one };
        let a = run_monte_carlo(&spec, &all_methods(case), one).unwrap();
        let b = run_monte_carlo(&spec, &all_methods(case), many).unwrap();
        same &= a.to_csv() == b.to_csv() && a.runs_csv() == b.runs_csv();
    }
    (same, format!("reports identical for 1 vs 8 threads: {same}"))
}

fn criterion_6(reports: &[MonteCarloReport]) -> Outcome {
    let parts = [
        balancing(),
        double_robustness(),
        iv_identities(),
        sc_oracle(),
        rdd_noiseless(),
        bootstrap_vs_closed_form(),
        delta_gradients(),
        mse_identity(reports),
        thread_determinism(),
    ];
    Outcome {
        pass: parts.iter().all(|p| p.0),
        detail: parts
            .iter()
            .map(|(ok, s)| format!("[{}] {s}", if *ok { "ok" } else { "FAIL" }))
            .collect::<Vec<_>>()
            .join("; "),
    }
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut reports = Vec::new();
    let mut results: Vec<(&str, Outcome, f64)> = Vec::new();
    let mut timed = |name: &'static str, f: &mut dyn FnMut(&mut Vec<MonteCarloReport>) -> Outcome| {
        let start = Instant::now();
        let out = f(&mut reports);
        let secs = start.elapsed().as_secs_f64();
        println!(
            "{} criterion {name} ({secs:.1}s): {}",
            if out.pass { "PASS" } else { "FAIL" },
            out.detail
        );
        results.push((name, out, secs));
    };
    timed("1 case 1 table", &mut criterion_1);
    timed("2 panel properties", &mut criterion_2);
    timed("3 case 4 table", &mut |r| table_criterion(CaseId::Cs4, r));
    timed("4 case 5 table", &mut |r| table_criterion(CaseId::Cs5, r));
    timed("5 case 6 table", &mut |r| table_criterion(CaseId::Cs6, r));
    timed("6 property suites", &mut |r| criterion_6(r));

    let failed = results.iter().filter(|r| !r.1.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
