//! `tvpgamp`: batch driver for simulation, fitting, forecasting, evaluation
//! and the Monte Carlo benchmarks.
//!
//! Settings resolve as flags, then the `--config` JSON file, then defaults.
//! Every run writes `manifest.json` with the resolved configuration and the
//! SHA-256 of each artifact; passing a manifest back as `--config` reruns it.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use tvp_gamp::benchmark::{
    run_benchmark, summarize, write_ad_csv, write_timing_csv, BenchmarkSpec, Estimator,
};
use tvp_gamp::design::DenseOperator;
use tvp_gamp::dgp::{simulate, SimKind, SimSpec};
use tvp_gamp::forecast::{
    evaluate, infer_horizon, read_forecasts_csv, run_recursive, write_cumsfe_csv,
    write_forecasts_csv, ForecastData, ForecastModel, ForecastSpec,
};
use tvp_gamp::gamp::{gamp_solve, solve_tvp, write_trace_csv, GampConfig};
use tvp_gamp::ingest::{RawPanel, TargetForm};
use tvp_gamp::io::{fmt_f64, write_csv};
use tvp_gamp::oracles::GibbsConfig;
use tvp_gamp::Error;

use manifest::Manifest;

#[derive(Parser, Debug)]
#[command(name = "tvpgamp", version, about = "TVP regression via generalized approximate message passing")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// JSON configuration file, or a manifest from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate Monte Carlo datasets.
    Simulate(SimulateArgs),
    /// Fit GAMP to a `y, x1..xp` CSV.
    Fit(FitArgs),
    /// Recursive out-of-sample inflation forecasts.
    Forecast(ForecastArgs),
    /// Score forecasts, optionally against a benchmark.
    Evaluate(EvaluateArgs),
    /// Monte Carlo comparison of GAMP and the reference estimators.
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Debug, Clone)]
struct SimArgs {
    /// poissonJumps | regressionEffects | randomWalk | sparseRegression | ar4
    #[arg(long)]
    kind: Option<SimKind>,
    #[arg(long = "T")]
    t: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// CSV with a `y` column and one column per regressor (`t`/`date` ignored).
    #[arg(long)]
    data: PathBuf,
    /// Fit constant coefficients instead of a TVP regression.
    #[arg(long = "static")]
    static_fit: bool,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ForecastArgs {
    /// Panel CSV with a `date` column and level series.
    #[arg(long)]
    panel: PathBuf,
    /// Sidecar `{ "tcodes": {...} }` overriding in-file codes.
    #[arg(long)]
    tcodes: Option<PathBuf>,
    /// Price index column forecast as inflation.
    #[arg(long, default_value = "CPIAUCSL")]
    price: String,
    #[arg(long)]
    horizon: Option<usize>,
    /// gap | level
    #[arg(long)]
    form: Option<String>,
    /// tvpGamp | constGamp | ar2Benchmark
    #[arg(long)]
    model: Option<ForecastModel>,
    #[arg(long)]
    factors: Option<usize>,
    /// Skip the AR(2) benchmark run and the relative metrics.
    #[arg(long)]
    no_benchmark: bool,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    forecasts: PathBuf,
    #[arg(long)]
    benchmark: Option<PathBuf>,
    /// Forecast horizon for the DM lag window (default: from the dates).
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    #[command(flatten)]
    sim: SimArgs,
    /// Comma-separated: gamp_sbl, ols, ols_per_predictor, ols_constant, gibbs_lasso, gibbs_ssvs
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<Estimator>>,
    #[arg(long, short)]
    out: PathBuf,
}

/// Everything a run can be configured with; absent blocks take defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    sim: Option<SimSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    estimators: Option<Vec<Estimator>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    forecast: Option<ForecastSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamp: Option<GampConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gibbs: Option<GibbsConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    master_seed: Option<u64>,
}

/// A failure mapped to the process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Argument(_) => 2,
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
            Error::Numerical(_) | Error::Rank(_) | Error::Divergence { .. } => 4,
            _ => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot start thread pool: {e}")))?;
    }
    let config = match &cli.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a, config),
        Command::Fit(a) => cmd_fit(a, config),
        Command::Forecast(a) => cmd_forecast(a, config),
        Command::Evaluate(a) => cmd_evaluate(a, config),
        Command::Benchmark(a) => cmd_benchmark(a, config),
    }
}

fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Failure::usage(format!("config {} is not valid JSON: {e}", path.display())))?;
    // A manifest carries the resolved configuration under `config`.
    let value = match value.get("config") {
        Some(inner) if value.get("artifacts").is_some() => inner.clone(),
        _ => value,
    };
    serde_json::from_value(value)
        .map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))
}

fn prepare_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::usage(format!("cannot create output directory {}: {e}", dir.display())))
}

fn resolve_sim(args: &SimArgs, config: &RunConfig) -> CliResult<(SimSpec, usize)> {
    let mut spec = config.sim.clone().unwrap_or_else(|| SimSpec::new(SimKind::Ar4, 500, 0));
    if config.sim.is_none() && args.kind.is_none() {
        return Err(Failure::usage("--kind is required (or a `sim` block in --config)"));
    }
    if let Some(k) = args.kind {
        spec.kind = k;
    }
    if let Some(t) = args.t {
        spec.t = t;
    }
    if let Some(p) = args.p {
        spec.p = p;
    }
    if let Some(rho) = args.rho {
        spec.rho = rho;
    }
    if let Some(c) = args.c {
        spec.c = c;
    }
    if let Some(seed) = args.seed.or(config.master_seed) {
        spec.seed = seed;
    }
    let reps = args.reps.or(config.reps).unwrap_or(1);
    if reps == 0 {
        return Err(Failure::usage("--reps must be at least 1"));
    }
    spec.validate()?;
    Ok((spec, reps))
}

fn cmd_simulate(args: SimulateArgs, config: RunConfig) -> CliResult<()> {
    let (spec, reps) = resolve_sim(&args.sim, &config)?;
    prepare_out(&args.out)?;
    let mut manifest = Manifest::new("simulate", &args.out);
    for rep in 0..reps as u64 {
        let data = simulate(&spec, rep)?;
        let csv = format!("sim_rep{rep}.csv");
        data.write_csv(&args.out.join(&csv))?;
        manifest.add(&csv)?;
        let meta = format!("sim_rep{rep}_meta.json");
        write_json(&args.out.join(&meta), &data.meta)?;
        manifest.add(&meta)?;
    }
    let resolved = RunConfig {
        sim: Some(spec.clone()),
        reps: Some(reps),
        master_seed: Some(spec.seed),
        ..RunConfig::default()
    };
    manifest.finish(&resolved, spec.seed)
}

/// Reads `y` and the regressors from a fit input CSV.
fn read_fit_input(path: &Path) -> CliResult<(Vec<f64>, nalgebra::DMatrix<f64>, Vec<String>)> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
            Failure::usage(format!("input {} not found", path.display()))
        }
        _ => Failure::from(Error::from(e)),
    })?;
    let headers: Vec<String> = rdr.headers().map_err(Error::from)?.iter().map(|h| h.trim().to_string()).collect();
    let y_col = headers
        .iter()
        .position(|h| h == "y")
        .ok_or_else(|| Failure::from(Error::Data("fit input needs a `y` column".into())))?;
    let x_cols: Vec<usize> = (0..headers.len())
        .filter(|&j| j != y_col && !matches!(headers[j].as_str(), "t" | "date") && !headers[j].starts_with("truth"))
        .collect();
    if x_cols.is_empty() {
        return Err(Error::Data("fit input has no regressor columns".into()).into());
    }
    let mut y = Vec::new();
    let mut x = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(Error::from)?;
        let num = |j: usize| -> CliResult<f64> {
            let cell = row.get(j).unwrap_or("").trim();
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Data(format!("row {}: `{cell}` in column {} is not a finite number", i + 1, headers[j])).into())
        };
        y.push(num(y_col)?);
        for &j in &x_cols {
            x.push(num(j)?);
        }
    }
    if y.is_empty() {
        return Err(Error::Data("fit input has no rows".into()).into());
    }
    let names = x_cols.iter().map(|&j| headers[j].clone()).collect();
    Ok((y.clone(), nalgebra::DMatrix::from_row_slice(y.len(), x_cols.len(), &x), names))
}

fn cmd_fit(args: FitArgs, config: RunConfig) -> CliResult<()> {
    let (y, x, names) = read_fit_input(&args.data)?;
    let mut cfg = config.gamp.clone().unwrap_or_default();
    cfg.record_trace = true;
    prepare_out(&args.out)?;
    let mut manifest = Manifest::new("fit", &args.out);
    let start = Instant::now();
    let result = if args.static_fit {
        gamp_solve(&DenseOperator::new(x.clone()), &y, &cfg).map(|sol| {
            let path = nalgebra::DMatrix::from_fn(y.len(), x.ncols(), |_, j| sol.state.beta_hat[j]);
            (sol, path)
        })
    } else {
        solve_tvp(&x, &y, &cfg).map(|fit| (fit.solution, fit.path.combined))
    };
    let (solution, path) = match result {
        Ok(v) => v,
        Err(e) => {
            let diag = json!({ "error": e.to_string(), "kind": error_kind(&e) });
            write_json(&args.out.join("error.json"), &diag)?;
            return Err(e.into());
        }
    };
    let wall = start.elapsed().as_secs_f64();

    let mut header = vec!["t".to_string()];
    header.extend(names.iter().cloned());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        args.out.join("beta_path.csv"),
        &header,
        (0..path.nrows()).map(|t| {
            let mut row = vec![t.to_string()];
            row.extend(path.row(t).iter().map(|v| fmt_f64(*v)));
            row
        }),
    )?;
    manifest.add("beta_path.csv")?;
    solution.volatility.write_csv(&args.out.join("volatility.csv"), None)?;
    manifest.add("volatility.csv")?;
    write_trace_csv(&args.out.join("trace.csv"), &solution.trace)?;
    manifest.add("trace.csv")?;
    let summary = json!({
        "iterations": solution.state.iter,
        "converged": solution.state.converged,
        "wallSeconds": wall,
        "tvp": !args.static_fit,
        "regressors": names,
        "observations": y.len(),
    });
    write_json(&args.out.join("summary.json"), &summary)?;
    manifest.add_volatile("summary.json");
    let resolved = RunConfig {
        gamp: Some(cfg),
        ..config
    };
    manifest.finish(&resolved, resolved.master_seed.unwrap_or(0))
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Divergence { .. } => "divergence",
        Error::Numerical(_) => "numerical",
        Error::Rank(_) => "rank",
        Error::Argument(_) => "argument",
        _ => "data",
    }
}

fn cmd_forecast(args: ForecastArgs, config: RunConfig) -> CliResult<()> {
    if !args.panel.exists() {
        return Err(Failure::usage(format!("panel {} not found", args.panel.display())));
    }
    let mut spec = config.forecast.clone().unwrap_or_default();
    if let Some(h) = args.horizon {
        spec.horizon = h;
    }
    if let Some(form) = &args.form {
        spec.target_form = match form.as_str() {
            "gap" => TargetForm::Gap,
            "level" => TargetForm::Level,
            other => return Err(Failure::usage(format!("--form must be gap or level, got `{other}`"))),
        };
    }
    if let Some(m) = args.model {
        spec.model = m;
    }
    if let Some(k) = args.factors {
        spec.n_factors = k;
    }
    spec.validate()?;
    let cfg = config.gamp.clone().unwrap_or_default();
    let raw = RawPanel::read_csv(&args.panel, args.tcodes.as_deref())?;
    let data = ForecastData::from_raw(&raw, &args.price)?;

    prepare_out(&args.out)?;
    let mut manifest = Manifest::new("forecast", &args.out);
    let run = run_recursive(&data, &spec, &cfg)?;
    if run.records.is_empty() {
        return Err(Error::Numerical("estimation failed at every origin".into()).into());
    }
    write_forecasts_csv(&args.out.join("forecasts.csv"), &run.records)?;
    manifest.add("forecasts.csv")?;

    let benchmark = if args.no_benchmark || spec.model == ForecastModel::Ar2Benchmark {
        None
    } else {
        let bspec = ForecastSpec {
            model: ForecastModel::Ar2Benchmark,
            ..spec.clone()
        };
        let b = run_recursive(&data, &bspec, &cfg)?;
        write_forecasts_csv(&args.out.join("benchmark_forecasts.csv"), &b.records)?;
        manifest.add("benchmark_forecasts.csv")?;
        Some(b.records)
    };
    let report = evaluate(&run.records, benchmark.as_deref(), spec.horizon)?;
    let metrics = json!({
        "model": spec.model.label(),
        "horizon": spec.horizon,
        "metrics": report,
        "failedOrigins": run.failures,
        "coefficientRule": "last in-sample coefficients and variance",
        "benchmarkVariance": "OLS residual variance with parameter uncertainty",
    });
    write_json(&args.out.join("metrics.json"), &metrics)?;
    manifest.add("metrics.json")?;
    write_cumsfe_csv(&args.out.join("cumsfe.csv"), &report.cumulative_sfe)?;
    manifest.add("cumsfe.csv")?;
    let resolved = RunConfig {
        forecast: Some(spec),
        gamp: Some(cfg),
        ..config
    };
    manifest.finish(&resolved, resolved.master_seed.unwrap_or(0))
}

fn cmd_evaluate(args: EvaluateArgs, config: RunConfig) -> CliResult<()> {
    for p in std::iter::once(&args.forecasts).chain(args.benchmark.iter()) {
        if !p.exists() {
            return Err(Failure::usage(format!("forecasts {} not found", p.display())));
        }
    }
    let records = read_forecasts_csv(&args.forecasts)?;
    let benchmark = args.benchmark.as_deref().map(read_forecasts_csv).transpose()?;
    let h = match args.horizon {
        Some(h) => h,
        None => infer_horizon(&records)?,
    };
    let report = evaluate(&records, benchmark.as_deref(), h)?;
    prepare_out(&args.out)?;
    let mut manifest = Manifest::new("evaluate", &args.out);
    write_json(&args.out.join("metrics.json"), &json!({ "horizon": h, "metrics": report }))?;
    manifest.add("metrics.json")?;
    write_cumsfe_csv(&args.out.join("cumsfe.csv"), &report.cumulative_sfe)?;
    manifest.add("cumsfe.csv")?;
    manifest.finish(&config, config.master_seed.unwrap_or(0))
}

fn cmd_benchmark(args: BenchmarkArgs, config: RunConfig) -> CliResult<()> {
    let (sim, reps) = resolve_sim(&args.sim, &config)?;
    let mut spec = BenchmarkSpec::new(sim, reps);
    if let Some(g) = &config.gamp {
        spec.gamp = g.clone();
    }
    if let Some(g) = &config.gibbs {
        spec.gibbs = g.clone();
    }
    if let Some(e) = args.estimators.clone().or(config.estimators.clone()) {
        spec.estimators = e;
    }
    spec.validate()?;
    prepare_out(&args.out)?;
    let mut manifest = Manifest::new("benchmark", &args.out);
    let records = run_benchmark(&spec)?;
    write_ad_csv(&args.out.join("ad.csv"), &records)?;
    // Wall-clock columns differ between runs; hashes cover the AD values only.
    manifest.add_columns("ad.csv", &["rep", "estimator", "ad"])?;
    let summary = summarize(&records, &spec.estimators);
    write_timing_csv(&args.out.join("timing.csv"), &spec, &summary)?;
    manifest.add_volatile("timing.csv");
    write_json(&args.out.join("summary.json"), &summary)?;
    manifest.add_volatile("summary.json");
    let resolved = RunConfig {
        sim: Some(spec.sim.clone()),
        reps: Some(spec.reps),
        estimators: Some(spec.estimators.clone()),
        gamp: Some(spec.gamp.clone()),
        gibbs: Some(spec.gibbs.clone()),
        master_seed: Some(spec.sim.seed),
        forecast: None,
    };
    manifest.finish(&resolved, spec.sim.seed)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n")?;
    Ok(())
}
