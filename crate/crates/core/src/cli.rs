//! Command-line front end: `estimate` on user data and `simulate` for the
//! Monte Carlo case studies.
//!
//! Exit codes: 0 success, 1 failed reference check, 2 input error,
//! 3 estimation error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde_json::json;

use crate::data::{difference_in_means, validate, CausalEstimate, ObservationalDataset, PanelDataset, RawColumns, TreatmentKind};
use crate::error::CausalError;
use crate::estimators::{ate_dr, ate_ipw, ate_matching, ate_or, ate_psr, ate_stratification, OrSpec};
use crate::io::CsvTable;
use crate::panel::{fit_panel, PanelMethod, PanelSpec};
use crate::propensity::{estimate_propensity_binary, estimate_propensity_multivalued, trim_overlap, PropensityFit};
use crate::quasi::{ate_2sls, ate_did, ate_did_covariates, rdd_fuzzy, rdd_sharp, DidDataset, RddSpec};
use crate::simulate::{
    calibrate_cs1_spread, case_methods, compare_to_reference, run_monte_carlo, CaseId, DgpSpec, MonteCarloOptions,
    ReferenceTable, Tolerances,
};
use crate::variance::{bootstrap_variance, Resample};

pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ESTIMATION: i32 = 3;

/// Default seed for every random draw.
pub const DEFAULT_SEED: u64 = 42;

/// Target mean of the treatment-only regression used to choose how the case 1
/// covariate spread is read.
const CS1_OR2_TARGET: f64 = -3.149;

#[derive(Debug, Parser)]
#[command(name = "causal", version, about = "Causal effect estimation and Monte Carlo case studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate a treatment effect from a CSV file.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo case study and write report files.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    /// Difference in arm means.
    Dim,
    /// Outcome regression.
    Or,
    /// Inverse probability weighting.
    Ipw,
    /// Propensity-score regression.
    Psr,
    /// Propensity-score stratification.
    Strat,
    /// Nearest-neighbour propensity matching.
    Match,
    /// Doubly robust (augmented IPW).
    Dr,
    /// Two-stage least squares.
    Tsls,
    /// Panel regression (see --panel-method).
    Panel,
    /// Difference in differences.
    Did,
    /// Sharp regression discontinuity.
    Rdd,
    /// Fuzzy regression discontinuity.
    RddFuzzy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Markdown,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long, value_enum)]
    method: Method,
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    outcome: String,
    /// Treatment column (not needed for did or rdd).
    #[arg(long)]
    treatment: Option<String>,
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    instruments: Vec<String>,
    /// Declared treatment levels; makes the treatment multivalued.
    #[arg(long, value_delimiter = ',')]
    levels: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    dose: f64,
    #[arg(long, default_value_t = 0.0)]
    reference: f64,
    /// Overlap bounds for ipw and dr with a binary treatment.
    #[arg(long, default_value = "0.01,0.99")]
    trim: String,
    #[arg(long)]
    no_trim: bool,
    #[arg(long, default_value_t = 5)]
    strata: usize,
    #[arg(long, default_value_t = 1)]
    matches: usize,
    #[arg(long, default_value_t = 2)]
    degree: usize,
    #[arg(long)]
    unit: Option<String>,
    #[arg(long)]
    time: Option<String>,
    #[arg(long, default_value = "fe")]
    panel_method: String,
    #[arg(long)]
    group: Option<String>,
    #[arg(long)]
    period: Option<String>,
    /// Running variable for rdd.
    #[arg(long)]
    running: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    cutoff: f64,
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Bootstrap replicates; 0 keeps the closed-form variance.
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Case study: cs1 .. cs6.
    #[arg(long)]
    case: String,
    #[arg(long, default_value_t = 1000)]
    runs: usize,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Output directory for report.csv, runs.csv and meta.json.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    jobs: Option<usize>,
    /// Subset of methods (default: all for the case).
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// Parameter override `name=value`; repeatable.
    #[arg(long = "param")]
    params: Vec<String>,
    /// Runs used to choose the case 1 covariate spread reading.
    #[arg(long, default_value_t = 200)]
    calibration_runs: usize,
    /// Reference table to check the report against.
    #[arg(long)]
    check: Option<PathBuf>,
    /// Tolerance JSON; defaults to `<reference stem>_tol.json` beside the table.
    #[arg(long)]
    tol_file: Option<PathBuf>,
}

enum Failure {
    Input(String),
    Estimation(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Input(_) => EXIT_INPUT,
            Failure::Estimation(_) => EXIT_ESTIMATION,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Estimation(m) => m,
        }
    }
}

fn input(e: impl std::fmt::Display) -> Failure {
    Failure::Input(e.to_string())
}

fn estimation(e: CausalError) -> Failure {
    Failure::Estimation(e.to_string())
}

/// Parse arguments, run the command, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Estimate(a) => cmd_estimate(&a),
        Command::Simulate(a) => cmd_simulate(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

enum Prepared {
    Obs(ObservationalDataset),
    Panel(PanelDataset),
    Did(DidDataset),
}

fn required<'a>(value: &'a Option<String>, flag: &str, method: Method) -> Result<&'a str, Failure> {
    value
        .as_deref()
        .ok_or_else(|| Failure::Input(format!("--{flag} is required for method {method:?}")))
}

fn parse_trim(text: &str) -> Result<(f64, f64), Failure> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [lo, hi] => {
            let lo: f64 = lo.parse().map_err(|_| input(format!("bad --trim bound '{lo}'")))?;
            let hi: f64 = hi.parse().map_err(|_| input(format!("bad --trim bound '{hi}'")))?;
            if !(0.0 <= lo && lo < hi && hi <= 1.0) {
                return Err(input("--trim needs 0 <= lo < hi <= 1"));
            }
            Ok((lo, hi))
        }
        _ => Err(input("--trim expects lo,hi")),
    }
}

fn prepare(a: &EstimateArgs, table: &CsvTable) -> Result<Prepared, Failure> {
    let y = table.column(&a.outcome).map_err(input)?.to_vec();
    let x = table.matrix(&a.covariates).map_err(input)?;
    match a.method {
        Method::Panel => {
            let unit = table.id_column(required(&a.unit, "unit", a.method)?).map_err(input)?;
            let time = table.id_column(required(&a.time, "time", a.method)?).map_err(input)?;
            let d = table.column(required(&a.treatment, "treatment", a.method)?).map_err(input)?.to_vec();
            Ok(Prepared::Panel(PanelDataset::new(unit, time, y, d, x).map_err(input)?))
        }
        Method::Did => {
            let g = table.id_column(required(&a.group, "group", a.method)?).map_err(input)?;
            let p = table.id_column(required(&a.period, "period", a.method)?).map_err(input)?;
            let mut dd = DidDataset::new(y, g, p).map_err(input)?;
            if !a.covariates.is_empty() {
                dd = dd.with_covariates(x).map_err(input)?;
            }
            Ok(Prepared::Did(dd))
        }
        Method::Rdd | Method::RddFuzzy => {
            let t = table.column(required(&a.running, "running", a.method)?).map_err(input)?.to_vec();
            let d = if a.method == Method::RddFuzzy {
                table.column(required(&a.treatment, "treatment", a.method)?).map_err(input)?.to_vec()
            } else {
                t.iter().map(|&v| (v >= a.cutoff) as u8 as f64).collect()
            };
            // the running variable travels as the single covariate so rows resample together
            let raw = RawColumns::new(y, d, DMatrix::from_column_slice(t.len(), 1, &t));
            Ok(Prepared::Obs(validate(raw).map_err(input)?))
        }
        _ => {
            let d = table.column(required(&a.treatment, "treatment", a.method)?).map_err(input)?.to_vec();
            let mut raw = RawColumns::new(y, d, x);
            if !a.levels.is_empty() {
                raw = raw.with_kind(TreatmentKind::Multivalued(a.levels.clone()));
            }
            if a.method == Method::Tsls {
                if a.instruments.is_empty() {
                    return Err(input("--instruments is required for method Tsls"));
                }
                raw = raw.with_instruments(table.matrix(&a.instruments).map_err(input)?);
            }
            Ok(Prepared::Obs(validate(raw).map_err(input)?))
        }
    }
}

struct Settings {
    method: Method,
    dose: f64,
    reference: f64,
    trim: Option<(f64, f64)>,
    strata: usize,
    matches: usize,
    degree: usize,
    panel: PanelSpec,
    cutoff: f64,
    rdd: RddSpec,
}

fn propensity(ds: &ObservationalDataset) -> crate::Result<PropensityFit> {
    match ds.treatment_kind() {
        TreatmentKind::Multivalued(_) => estimate_propensity_multivalued(ds),
        _ => estimate_propensity_binary(ds),
    }
}

/// Fit the propensity model and, for binary treatments, drop units outside the
/// overlap bounds.
fn trimmed(ds: &ObservationalDataset, trim: Option<(f64, f64)>) -> crate::Result<(ObservationalDataset, PropensityFit)> {
    let ps = propensity(ds)?;
    match trim {
        Some((lo, hi)) if ds.is_binary() => {
            let (ps, keep) = trim_overlap(&ps, lo, hi)?;
            Ok((ds.select_rows(&keep), ps))
        }
        _ => Ok((ds.clone(), ps)),
    }
}

fn running(ds: &ObservationalDataset) -> Vec<f64> {
    ds.x().column(0).iter().copied().collect()
}

fn estimate_obs(s: &Settings, ds: &ObservationalDataset) -> crate::Result<CausalEstimate> {
    match s.method {
        Method::Dim => difference_in_means(ds),
        Method::Or => ate_or(ds, &OrSpec::default(), s.dose, s.reference),
        Method::Ipw => {
            let (kept, ps) = trimmed(ds, s.trim)?;
            ate_ipw(&kept, &ps, s.dose, s.reference)
        }
        Method::Dr => {
            let (kept, ps) = trimmed(ds, s.trim)?;
            ate_dr(&kept, &OrSpec::default(), &ps, s.dose, s.reference)
        }
        Method::Psr => ate_psr(ds, &estimate_propensity_binary(ds)?, s.dose, s.reference, s.degree),
        Method::Strat => ate_stratification(ds, &estimate_propensity_binary(ds)?, s.strata),
        Method::Match => ate_matching(ds, &estimate_propensity_binary(ds)?, s.matches),
        Method::Tsls => ate_2sls(ds),
        Method::Rdd => rdd_sharp(ds.y(), &running(ds), s.cutoff, &s.rdd),
        Method::RddFuzzy => rdd_fuzzy(ds.y(), &running(ds), ds.d(), s.cutoff, &s.rdd),
        Method::Panel | Method::Did => Err(CausalError::InvalidArgument("wrong data layout".into())),
    }
}

fn estimate_did(dd: &DidDataset) -> crate::Result<CausalEstimate> {
    if dd.x().is_some() {
        ate_did_covariates(dd)
    } else {
        ate_did(dd)
    }
}

fn with_bootstrap<D, F>(est: CausalEstimate, data: &D, b: usize, seed: u64, f: F) -> crate::Result<CausalEstimate>
where
    D: Resample + Sync,
    F: Fn(&D) -> crate::Result<CausalEstimate> + Sync,
{
    if b == 0 {
        return Ok(est);
    }
    let boot = bootstrap_variance(|d: &D| f(d).map(|e| e.point), data, b, seed)?;
    Ok(boot.apply(est))
}

fn cmd_estimate(a: &EstimateArgs) -> Result<i32, Failure> {
    let trim = if a.no_trim { None } else { Some(parse_trim(&a.trim)?) };
    let panel_method: PanelMethod = a.panel_method.parse().map_err(input)?;
    if a.bootstrap == 1 {
        return Err(input("--bootstrap needs at least two replicates"));
    }
    let table = CsvTable::from_path(&a.data).map_err(input)?;
    let prepared = prepare(a, &table)?;
    let settings = Settings {
        method: a.method,
        dose: a.dose,
        reference: a.reference,
        trim,
        strata: a.strata,
        matches: a.matches,
        degree: a.degree,
        panel: PanelSpec::new(panel_method),
        cutoff: a.cutoff,
        rdd: RddSpec { bandwidth: a.bandwidth },
    };
    let est = match &prepared {
        Prepared::Obs(ds) => {
            let f = |d: &ObservationalDataset| estimate_obs(&settings, d);
            with_bootstrap(f(ds).map_err(estimation)?, ds, a.bootstrap, a.seed, f)
        }
        Prepared::Panel(p) => {
            let f = |d: &PanelDataset| fit_panel(d, &settings.panel);
            with_bootstrap(f(p).map_err(estimation)?, p, a.bootstrap, a.seed, f)
        }
        Prepared::Did(dd) => with_bootstrap(estimate_did(dd).map_err(estimation)?, dd, a.bootstrap, a.seed, estimate_did),
    }
    .map_err(estimation)?;
    match a.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&est).map_err(input)?),
        Format::Markdown => print!("{}", markdown(&est)),
    }
    Ok(0)
}

fn markdown(est: &CausalEstimate) -> String {
    let mut s = String::new();
    let fmt_opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
    let _ = writeln!(s, "| field | value |");
    let _ = writeln!(s, "|---|---|");
    let _ = writeln!(s, "| method | {} |", est.method);
    let _ = writeln!(s, "| estimand | {:?} |", est.estimand);
    let _ = writeln!(s, "| dose | {} |", est.dose);
    if let Some(r) = est.reference {
        let _ = writeln!(s, "| reference | {r} |");
    }
    let _ = writeln!(s, "| point | {:.6} |", est.point);
    let _ = writeln!(s, "| variance | {} |", fmt_opt(est.variance));
    let _ = writeln!(s, "| std. error | {} |", fmt_opt(est.standard_error()));
    match est.ci {
        Some((lo, hi)) => {
            let _ = writeln!(s, "| 95% CI | [{lo:.6}, {hi:.6}] |");
        }
        None => {
            let _ = writeln!(s, "| 95% CI | - |");
        }
    }
    let _ = writeln!(s, "| n used | {} |", est.n_used);
    for (k, v) in &est.diagnostics {
        let _ = writeln!(s, "| {k} | {v} |");
    }
    s
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<i32, Failure> {
    let case: CaseId = a.case.parse().map_err(input)?;
    let mut spec = DgpSpec::new(case, a.n).map_err(input)?;
    let mut overridden = Vec::new();
    for p in &a.params {
        let (name, value) = p
            .split_once('=')
            .ok_or_else(|| input(format!("--param expects name=value, got '{p}'")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| input(format!("--param {name}: '{value}' is not a number")))?;
        spec = spec.with_param(name.trim(), value).map_err(input)?;
        overridden.push(name.trim().to_string());
    }
    let methods: Vec<String> = if a.methods.is_empty() {
        case_methods(case).iter().map(|s| s.to_string()).collect()
    } else {
        a.methods.clone()
    };
    if let Some(bad) = methods.iter().find(|m| !case_methods(case).contains(&m.as_str())) {
        return Err(input(format!(
            "case {case} has no method {bad}; expected one of {}",
            case_methods(case).join(", ")
        )));
    }
    if a.runs < 2 {
        return Err(input("--runs must be at least 2"));
    }
    let reference = match &a.check {
        Some(path) => {
            let tol_path = match &a.tol_file {
                Some(t) => t.clone(),
                None => {
                    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("reference");
                    path.with_file_name(format!("{stem}_tol.json"))
                }
            };
            Some((
                ReferenceTable::from_path(path).map_err(input)?,
                Tolerances::from_path(&tol_path).map_err(input)?,
            ))
        }
        None => None,
    };

    let calibration = if case == CaseId::Cs1 && !overridden.iter().any(|p| p == "x_spread_is_variance") {
        let c = calibrate_cs1_spread(a.n, a.calibration_runs.max(2), a.seed, CS1_OR2_TARGET).map_err(estimation)?;
        let is_var = if c.chosen == "variance" { 1.0 } else { 0.0 };
        spec = spec.with_param("x_spread_is_variance", is_var).map_err(input)?;
        Some(c)
    } else {
        None
    };

    let opts = MonteCarloOptions {
        runs: a.runs,
        seed: a.seed,
        jobs: a.jobs,
    };
    let report = run_monte_carlo(&spec, &methods, opts).map_err(estimation)?;

    std::fs::create_dir_all(&a.out).map_err(|e| input(format!("{}: {e}", a.out.display())))?;
    write_file(&a.out.join("report.csv"), &report.to_csv())?;
    write_file(&a.out.join("runs.csv"), &report.runs_csv())?;
    let meta = json!({
        "case": case.to_string(),
        "n": a.n,
        "runs": a.runs,
        "seed": a.seed,
        "true_tau": report.true_tau,
        "methods": methods,
        "params": spec.params,
        "calibration": calibration,
        "failed_runs": report.rows.iter().map(|r| (r.method.clone(), r.failed)).collect::<std::collections::BTreeMap<_, _>>(),
    });
    write_file(&a.out.join("meta.json"), &serde_json::to_string_pretty(&meta).map_err(input)?)?;
    print!("{}", report.to_csv());

    let Some((table, tolerances)) = reference else {
        return Ok(0);
    };
    let verdicts = compare_to_reference(&report, &table, &tolerances).map_err(input)?;
    for v in &verdicts {
        println!(
            "{} {}.{} {} observed={:.6}",
            if v.pass { "PASS" } else { "FAIL" },
            v.method,
            v.column,
            v.rule,
            v.observed
        );
    }
    write_file(&a.out.join("check.json"), &serde_json::to_string_pretty(&verdicts).map_err(input)?)?;
    Ok(if verdicts.iter().all(|v| v.pass) { 0 } else { EXIT_CHECK_FAILED })
}
