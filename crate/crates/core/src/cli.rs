//! Command-line front end: argument parsing, subcommand dispatch, and
//! reproducible run directories carrying a manifest.
//!
//! Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 a
//! verification check was violated.

use crate::error::{Error, ExitClass, Result};
use crate::feller::{feller_classify, QuadConfig};
use crate::mc::{check_martingale, estimate_feynman_kac, estimate_u, MCEstimate};
use crate::model::{load_config, DiffusionModel, FeynmanKacSpec};
use crate::oracles::{catalog, catalog_model};
use crate::pde::{minimal_solution, solve_cauchy, PDEGrid, PDESolution};
use crate::sim::{format_float, SimConfig};
use crate::verify::{
    continuity_check, ito_residual, viscosity_residual, BoundMode, ContinuityBoundParams,
    TestFunctionJet,
};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "explode",
    version,
    about = "Explosion-time distributions of diffusions: Monte Carlo and PDE \
             estimators with verification checks"
)]
struct Cli {
    /// Cap the number of worker threads (results do not depend on it).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Seed for all randomness; auto-generated and recorded if omitted.
    #[arg(long, global = true, value_name = "SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Monte Carlo estimate of the survival probability U(t, x).
    Estimate(EstimateArgs),
    /// Monte Carlo estimate of the weighted terminal average.
    Fk(EstimateArgs),
    /// Finite-difference solve of the Cauchy problem on a bounded domain.
    Solve(SolveArgs),
    /// Monotone truncation sweep toward the minimal solution.
    Minimal(MinimalArgs),
    /// Boundary classification by the scale-function integral test.
    Feller(FellerArgs),
    /// Residual diagnostics for simulated paths and solved fields.
    Verify(VerifyArgs),
    /// Nested stopped-process identity check.
    Martingale(MartingaleArgs),
    /// Time-continuity modulus check along a time grid.
    Continuity(ContinuityArgs),
    /// Align a Monte Carlo run with a grid run and compare values.
    Compare(CompareArgs),
    /// List the bundled example models or emit their config files.
    Catalog(CatalogArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Name of a bundled example model (see `catalog`).
    #[arg(long, value_name = "NAME", conflicts_with = "config")]
    model: Option<String>,
    /// TOML configuration file describing the model.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

impl ModelArgs {
    fn load(&self) -> Result<(DiffusionModel, FeynmanKacSpec, serde_json::Value)> {
        match (&self.model, &self.config) {
            (Some(name), None) => {
                let (model, fk) = catalog_model(name)?;
                Ok((model, fk, json!({ "catalog": name })))
            }
            (None, Some(path)) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    Error::Config(format!("cannot read {}: {e}", path.display()))
                })?;
                let (model, fk) = load_config(&text, &path.display().to_string())?;
                Ok((
                    model,
                    fk,
                    json!({ "path": path.display().to_string(), "text": text }),
                ))
            }
            (Some(_), Some(_)) => Err(Error::Invalid(
                "pass either --model or --config, not both".into(),
            )),
            (None, None) => Err(Error::Invalid(
                "a model is required: pass --model <name> or --config <file>".into(),
            )),
        }
    }
}

#[derive(Args)]
struct OutArgs {
    /// Directory for output files and the run manifest.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Reuse a non-empty output directory.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Start point; comma-separated coordinates for dimension above one.
    #[arg(long, value_name = "X", allow_hyphen_values = true)]
    x: String,
    /// Evaluation times, comma-separated and strictly increasing.
    #[arg(long, value_name = "T")]
    t: String,
    /// Number of sample paths.
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    /// Simulation time step.
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Simulate on the m-th truncated domain instead of the full one.
    #[arg(long, value_name = "M")]
    truncation: Option<u32>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Space step.
    #[arg(long, default_value_t = 1e-2)]
    dx: f64,
    /// Time step.
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Time horizon.
    #[arg(long, value_name = "T")]
    t_max: f64,
    /// Time-stepping weight: 0 explicit, 1/2 trapezoidal, 1 implicit.
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    /// Centered drift differences instead of first-order upwind.
    #[arg(long)]
    centered: bool,
    /// Solve on the m-th truncated domain (required when unbounded).
    #[arg(long, value_name = "M")]
    m: Option<u32>,
    /// Keep every k-th time slice in the CSV output.
    #[arg(long, default_value_t = 1, value_name = "K")]
    save_every: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct MinimalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1e-2)]
    dx: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Time horizon.
    #[arg(long, value_name = "T")]
    t_max: f64,
    /// Inclusive truncation range, e.g. 1:6.
    #[arg(long, default_value = "1:6", value_name = "M1:M2")]
    m_range: String,
    /// Sup-difference tolerance between consecutive truncations.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Keep every k-th time slice in the CSV output.
    #[arg(long, default_value_t = 1, value_name = "K")]
    save_every: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct FellerArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Interior reference point of the integral test (default: domain center).
    #[arg(long, allow_negative_numbers = true)]
    c: Option<f64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(subcommand)]
    check: VerifyCmd,
}

#[derive(Subcommand)]
enum VerifyCmd {
    /// Pathwise decomposition residual of a smooth test function.
    Ito(ItoArgs),
    /// Centered-difference residual table on dyadic grid coarsenings.
    Residual(ResidualArgs),
}

#[derive(Args)]
struct ItoArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Test function as an expression in (t, x).
    #[arg(long, default_value = "x^2")]
    phi: String,
    /// Declared time derivative of the test function.
    #[arg(long, default_value = "0")]
    phi_t: String,
    /// Declared gradient entries, semicolon-separated.
    #[arg(long, default_value = "2*x", value_delimiter = ';')]
    grad: Vec<String>,
    /// Declared Hessian entries, row-major and semicolon-separated.
    #[arg(long, default_value = "2", value_delimiter = ';')]
    hess: Vec<String>,
    /// Reference time of the decomposition.
    #[arg(long)]
    t_star: f64,
    /// Start point; comma-separated coordinates for dimension above one.
    #[arg(long, value_name = "X", allow_hyphen_values = true)]
    x: String,
    /// Space-time stopping radius around the start.
    #[arg(long)]
    delta: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    /// Fail (exit 3) when |mean residual| exceeds this many standard errors.
    #[arg(long, value_name = "R")]
    max_mean_se: Option<f64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ResidualArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1e-2)]
    dx: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Time horizon.
    #[arg(long, value_name = "T")]
    t_max: f64,
    /// Centered drift differences instead of first-order upwind.
    #[arg(long)]
    centered: bool,
    /// Solve on the m-th truncated domain (required when unbounded).
    #[arg(long, value_name = "M")]
    m: Option<u32>,
    /// Number of dyadic coarsening levels to tabulate.
    #[arg(long, default_value_t = 3)]
    levels: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct MartingaleArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Reference time of the stopped identity.
    #[arg(long)]
    t_star: f64,
    /// Reference point; comma-separated coordinates for dimension above one.
    #[arg(long, value_name = "X", allow_hyphen_values = true)]
    x: String,
    /// Space-time stopping radius around the reference point.
    #[arg(long)]
    delta: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Outer sample paths.
    #[arg(long, default_value_t = 2000)]
    outer: usize,
    /// Inner sample paths per outer stop.
    #[arg(long, default_value_t = 2000)]
    inner: usize,
    /// Allowed discrepancy in combined standard errors.
    #[arg(long, default_value_t = 3.0)]
    k_sigma: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ContinuityArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Evaluation point.
    #[arg(long, allow_negative_numbers = true)]
    x: f64,
    /// Time grid, comma-separated and strictly increasing.
    #[arg(long, value_name = "T")]
    t: String,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    /// Bound on |f| and |h| (default: the configured c0, else 1).
    #[arg(long)]
    c0: Option<f64>,
    /// Bound on the diffusion matrix and drift.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    /// Holder constant of f.
    #[arg(long, default_value_t = 1.0)]
    c_alpha: f64,
    /// Holder exponent of f.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Gradient bound used by the smooth branch.
    #[arg(long, default_value_t = 1.0)]
    c_prime: f64,
    /// Use the smooth-data branch of the modulus.
    #[arg(long)]
    smooth: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct CompareArgs {
    /// estimates.csv from an estimate or fk run (file or run directory).
    #[arg(long, value_name = "PATH")]
    mc: PathBuf,
    /// solution.csv from a solve or minimal run (file or run directory).
    #[arg(long, value_name = "PATH")]
    pde: PathBuf,
    /// Absolute tolerance floor added to the sampling band.
    #[arg(long, default_value_t = 0.0)]
    tol: f64,
    /// Width of the sampling band in standard errors.
    #[arg(long, default_value_t = 3.0)]
    k_sigma: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct CatalogArgs {
    /// Write every entry's config file into this directory.
    #[arg(long, value_name = "DIR")]
    emit: Option<PathBuf>,
    /// Reuse a non-empty output directory.
    #[arg(long)]
    overwrite: bool,
}

/// Entry point for the binary: parses std::env::args and runs.
pub fn run() -> i32 {
    let argv: Vec<String> = std::env::args().collect();
    run_from(&argv)
}

/// Runs the CLI on an explicit argv (argv[0] is the program name).
pub fn run_from(argv: &[String]) -> i32 {
    let started = Instant::now();
    let cli = match Cli::try_parse_from(argv.iter().map(String::as_str)) {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { 1 } else { 0 };
        }
    };
    if let Some(w) = cli.workers {
        if w == 0 {
            eprintln!("error: --workers must be at least 1");
            return 1;
        }
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global();
    }
    match dispatch(&cli, argv, started) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e.exit_class() {
                ExitClass::Usage => 1,
                ExitClass::Numerical => 2,
            }
        }
    }
}

fn dispatch(cli: &Cli, argv: &[String], started: Instant) -> Result<i32> {
    let seed = cli.seed.unwrap_or_else(rand::random::<u64>);
    match &cli.command {
        Cmd::Estimate(a) => run_estimate(a, false, seed, argv, started),
        Cmd::Fk(a) => run_estimate(a, true, seed, argv, started),
        Cmd::Solve(a) => run_solve(a, seed, argv, started),
        Cmd::Minimal(a) => run_minimal(a, seed, argv, started),
        Cmd::Feller(a) => run_feller(a, seed, argv, started),
        Cmd::Verify(a) => match &a.check {
            VerifyCmd::Ito(b) => run_verify_ito(b, seed, argv, started),
            VerifyCmd::Residual(b) => run_verify_residual(b, seed, argv, started),
        },
        Cmd::Martingale(a) => run_martingale(a, seed, argv, started),
        Cmd::Continuity(a) => run_continuity(a, seed, argv, started),
        Cmd::Compare(a) => run_compare(a, seed, argv, started),
        Cmd::Catalog(a) => run_catalog(a, seed, argv, started),
    }
}

// ---------------------------------------------------------------------------
// Run directories and manifests

#[derive(serde::Serialize)]
struct RunManifest {
    command: String,
    argv: Vec<String>,
    /// argv with the seed made explicit and output flags removed; re-running
    /// these args with a fresh --out reproduces the outputs bitwise.
    replay_args: Vec<String>,
    seed: u64,
    tool_version: &'static str,
    wall_time_s: f64,
    outputs: Vec<String>,
    config: serde_json::Value,
}

struct RunDir {
    dir: Option<PathBuf>,
    created: bool,
    outputs: Vec<String>,
}

impl RunDir {
    fn prepare(dir: Option<&Path>, overwrite: bool) -> Result<RunDir> {
        if let Some(d) = dir {
            if d.exists() {
                let occupied = fs::read_dir(d)?.next().is_some();
                if occupied && !overwrite {
                    return Err(Error::Invalid(format!(
                        "output directory {} is not empty; pass --overwrite to reuse it",
                        d.display()
                    )));
                }
            }
        }
        Ok(RunDir {
            dir: dir.map(Path::to_path_buf),
            created: false,
            outputs: Vec::new(),
        })
    }

    fn is_active(&self) -> bool {
        self.dir.is_some()
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        if let Some(d) = &self.dir {
            if !self.created {
                fs::create_dir_all(d)?;
                self.created = true;
            }
            fs::write(d.join(name), bytes)?;
            self.outputs.push(name.to_string());
        }
        Ok(())
    }

    fn finish(
        mut self,
        command: &str,
        argv: &[String],
        seed: u64,
        config: serde_json::Value,
        started: Instant,
    ) -> Result<()> {
        if self.dir.is_none() {
            return Ok(());
        }
        let manifest = RunManifest {
            command: command.to_string(),
            argv: argv.to_vec(),
            replay_args: replay_args(argv, seed),
            seed,
            tool_version: env!("CARGO_PKG_VERSION"),
            wall_time_s: started.elapsed().as_secs_f64(),
            outputs: self.outputs.clone(),
            config,
        };
        let text = pretty_json(&manifest)?;
        self.write("manifest.json", text.as_bytes())
    }
}

/// argv minus the program name and output flags, with the resolved seed
/// appended when it was auto-generated.
fn replay_args(argv: &[String], seed: u64) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip_value = false;
    let mut has_seed = false;
    for a in argv.iter().skip(1) {
        if skip_value {
            skip_value = false;
            continue;
        }
        if a == "--out" || a == "--emit" {
            skip_value = true;
            continue;
        }
        if a.starts_with("--out=") || a.starts_with("--emit=") || a == "--overwrite" {
            continue;
        }
        if a == "--seed" || a.starts_with("--seed=") {
            has_seed = true;
        }
        out.push(a.clone());
    }
    if !has_seed {
        out.push("--seed".into());
        out.push(seed.to_string());
    }
    out
}

// ---------------------------------------------------------------------------
// Small parsing and formatting helpers

fn parse_floats(text: &str, what: &str) -> Result<Vec<f64>> {
    let mut values = Vec::new();
    for part in text.split(',') {
        let trimmed = part.trim();
        values.push(trimmed.parse::<f64>().map_err(|_| {
            Error::Invalid(format!("cannot parse --{what} entry `{trimmed}` as a number"))
        })?);
    }
    Ok(values)
}

fn parse_m_range(text: &str) -> Result<(u32, u32)> {
    let bad = || Error::Invalid(format!("cannot parse --m-range `{text}`; expected M1:M2"));
    match text.split_once(':') {
        Some((a, b)) => {
            let m1 = a.trim().parse::<u32>().map_err(|_| bad())?;
            let m2 = b.trim().parse::<u32>().map_err(|_| bad())?;
            Ok((m1, m2))
        }
        None => {
            let m = text.trim().parse::<u32>().map_err(|_| bad())?;
            Ok((m, m))
        }
    }
}

fn pretty_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Output(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

fn csv_into_string(writer: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Output(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Output(e.to_string()))
}

fn estimates_csv(rows: &[MCEstimate]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "x", "value", "std_error", "n_paths", "n_invalid", "seed"])
        .map_err(|e| Error::Output(e.to_string()))?;
    for e in rows {
        let x = e
            .x
            .iter()
            .map(|v| format_float(*v))
            .collect::<Vec<_>>()
            .join(";");
        w.write_record(&[
            format_float(e.t),
            x,
            format_float(e.value),
            format_float(e.std_error),
            e.n_paths.to_string(),
            e.n_invalid.to_string(),
            e.rng_seed.to_string(),
        ])
        .map_err(|e| Error::Output(e.to_string()))?;
    }
    csv_into_string(w)
}

fn solution_summary(sol: &PDESolution) -> serde_json::Value {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in sol.final_slice() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    json!({
        "dim": sol.dim,
        "dx": sol.grid.dx,
        "dt": sol.grid.dt,
        "t_max": sol.grid.t_max,
        "theta": sol.theta,
        "upwind": sol.upwind,
        "truncation_index": sol.truncation_index,
        "n_times": sol.times.len(),
        "n_nodes": sol.n_nodes(),
        "t_last": sol.times.last(),
        "axes": sol
            .axes
            .iter()
            .map(|a| json!({ "min": a.first(), "max": a.last(), "len": a.len() }))
            .collect::<Vec<_>>(),
        "final_slice_min": lo,
        "final_slice_max": hi,
    })
}

// ---------------------------------------------------------------------------
// Subcommand bodies

fn run_estimate(
    args: &EstimateArgs,
    functional: bool,
    seed: u64,
    argv: &[String],
    started: Instant,
) -> Result<i32> {
    let (model, fk, model_desc) = args.model.load()?;
    let mut rundir = RunDir::prepare(args.out.out.as_deref(), args.out.overwrite)?;
    let x0 = parse_floats(&args.x, "x")?;
    let t_grid = parse_floats(&args.t, "t")?;
    let t_last = t_grid.iter().cloned().fold(0.0, f64::max);
    let mut cfg = SimConfig::new(args.dt, t_last.max(args.dt), seed);
    if let Some(m) = args.truncation {
        cfg = cfg.with_truncation(m);
    }
    let estimates = if functional {
        estimate_feynman_kac(&model, &fk, &x0, &t_grid, args.paths, &cfg)?
    } else {
        estimate_u(&model, &x0, &t_grid, args.paths, &cfg)?
    };
    let csv_text = estimates_csv(&estimates)?;
    if rundir.is_active() {
        rundir.write("estimates.csv", csv_text.as_bytes())?;
        rundir.write("estimates.json", pretty_json(&estimates)?.as_bytes())?;
        for e in &estimates {
            println!(
                "t = {} value = {:.6} +/- {:.2e} ({} paths, {} invalid)",
                e.t, e.value, e.std_error, e.n_paths, e.n_invalid
            );
        }
    } else {
        print!("{csv_text}");
    }
    let command = if functional { "fk" } else { "estimate" };
    let snapshot = json!({
        "model": model_desc,
        "functional": functional,
        "f": fk.f.to_string(),
        "h": fk.h.to_string(),
        "x": x0,
        "t_grid": t_grid,
        "paths": args.paths,
        "sim": cfg,
    });
    rundir.finish(command, argv, seed, snapshot, started)?;
    Ok(0)
}

fn run_solve(args: &SolveArgs, seed: u64, argv: &[String], started: Instant) -> Result<i32> {
    let (model, fk, model_desc) = args.model.load()?;
    if args.out.out.is_none() {
        return Err(Error::Invalid(
            "solve writes a solution field; pass --out <dir>".into(),
        ));
    }
    let mut rundir = RunDir::prepare(args.out.out.as_deref(), args.out.overwrite)?;
    let grid = PDEGrid::new(args.dx, args.dt, args.t_max)
        .with_theta(args.theta)
        .with_upwind(!args.centered);
    let sol = solve_cauchy(&model, &fk, args.m, &grid)?;
    let mut csv_buf = Vec::new();
    sol.write_csv(&mut csv_buf, args.save_every)?;
    rundir.write("solution.csv", &csv_buf)?;
    let summary = solution_summary(&sol);
    rundir.write("solution.json", pretty_json(&summary)?.as_bytes())?;
    println!(
        "solved {} spatial nodes x {} times; final slice in [{:.6}, {:.6}]",
        sol.n_nodes(),
        sol.times.len(),
        summary["final_slice_min"].as_f64().unwrap_or(f64::NAN),
        summary["final_slice_max"].as_f64().unwrap_or(f64::NAN),
    );
    let snapshot = json!({
        "model": model_desc,
        "f": fk.f.to_string(),
        "h": fk.h.to_string(),
        "grid": grid,
        "m": args.m,
        "save_every": args.save_every,
    });
    rundir.finish("solve", argv, seed, snapshot, started)?;
    Ok(0)
}

fn run_minimal(args: &MinimalArgs, seed: u64, argv: &[String], started: Instant) -> Result<i32> {
    let (model, fk, model_desc) = args.model.load()?;
    if args.out.out.is_none() {
        return Err(Error::Invalid(
            "minimal writes a solution field; pass --out <dir>".into(),
        ));
    }
    let mut rundir = RunDir::prepare(args.out.out.as_deref(), args.out.overwrite)?;
    let (m1, m2) = parse_m_range(&args.m_range)?;
    let grid = PDEGrid::new(args.dx, args.dt, args.t_max);
    let (sol, report) = minimal_solution(&model, &fk, &grid, (m1, m2), args.tol, m1 == m2)?;
    let mut csv_buf = Vec::new();
    sol.write_csv(&mut csv_buf, args.save_every)?;
    rundir.write("solution.csv", &csv_buf)?;
    rundir.write("solution.json", pretty_json(&solution_summary(&sol))?.as_bytes())?;
    rundir.write("convergence.json", pretty_json(&report)?.as_bytes())?;
    let last_diff = report.sup_diffs.last().copied().unwrap_or(0.0);
    println!(
        "truncations {}..{}; last sup increment {:.3e}; converged: {}",
        m1, m2, last_diff, report.converged
    );
    let snapshot = json!({
        "model": model_desc,
        "f": fk.f.to_string(),
        "h": fk.h.to_string(),
        "grid": grid,
        "m_range": [m1, m2],
        "tol": args.tol,
        "save_every": args.save_every,
    });
    rundir.finish("minimal", argv, seed, snapshot, started)?;
    if !report.converged {
        eprintln!(
            "error: truncation sweep did not reach tol = {:.1e} (last increment {:.3e}); \
             extend --m-range or relax --tol",
            args.tol, last_diff
        );
        return Ok(2);
    }
    Ok(0)
}

fn run_feller(args: &FellerArgs, seed: u64, argv: &[String], started: Instant) -> Result<i32> {
    let (model, _fk, model_desc) = args.model.load()?;
    let mut rundir = RunDir::prepare(args.out.out.as_deref(), args.out.overwrite)?;
    let report = feller_classify(&model, args.c, &QuadConfig::default())?;
    let json_text = pretty_json(&report)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["endpoint", "v", "diverged", "cutoffs_used", "final_cutoff", "evaluations"])
        .map_err(|e| Error::Output(e.to_string()))?;
    for side in [&report.left, &report.right] {
        w.write_record(&[
            format_float(side.endpoint),
            format_float(side.v),
            side.diverged.to_string(),
            side.cutoffs_used.to_string(),
            format_float(side.final_cutoff),
            side.evaluations.to_string(),
        ])
        .map_err(|e| Error::Output(e.to_string()))?;
    }
    let csv_text = csv_into_string(w)?;
    println!("classification: {:?}", report.classification);
    if rundir.is_active() {
        rundir.write("feller.json", json_text.as_bytes())?;
        rundir.write("feller.csv", csv_text.as_bytes())?;
    } else {
        print!("{json_text}");
    }
    let snapshot = json!({ "model": model_desc, "c": args.c });
    rundir.finish("feller", argv, seed, snapshot, started)?;
    Ok(0)
}

fn run_verify_ito(args: &ItoArgs, seed: u64, argv: &[String], started: Instant) -> Result<i32> {
    let (model, fk, model_desc) = args.model.load()?;
    let mut rundir = RunDir::prepare(args.out.out.as_deref(), args.out.overwrite)?;
    let grad: Vec<&str> = args.grad.iter().map(String::as_str).collect();
    let hess: Vec<&str> = args.hess.iter().map(String::as_str).collect();
    let jet = TestFunctionJet::parse(model.dim(), &args.phi, &args.phi_t, &grad, &hess)?;
    let x0 = parse_floats(&args.x, "x")?;
    let cfg = SimConfig::new(args.dt, args.t_star.max(args.dt), seed);
    let stats = ito_residual(&model, &fk, &jet, args.t_star, &x0, args.delta, args.paths, &cfg)?;
    let json_text = pretty_json(&stats)?;
    println!(
        "mean residual {:.6e} +/- {:.2e} (sd {:.3e}, {} paths, {} invalid)",
        stats.mean, stats.std_error, stats.sd, stats.n_paths, stats.n_invalid
    );
    if rundir.is_active() {
        rundir.write("ito.json", json_text.as_bytes())?;
    } else {
        print!("{json_text}");
    }
    let snapshot = json!({
        "model": model_desc,
        "phi": args.phi,
        "phi_t": args.phi_t,
        "grad": args.grad,
        "hess": args.hess,
        "t_star": args.t_star,
        "x": x0,
        "delta": args.delta,
        "paths": args.paths,
        "sim": cfg,
        "max_mean_se": args.max_mean_se,
    });
    rundir.finish("verify", argv, seed, snapshot, started)?;
    if let Some(r) = args.max_mean_se {
        if stats.mean.abs() > r * stats.std_error {
            eprintln!(
                "verification failed: |mean residual| = {:.3e} exceeds {} x standard error = {:.3e}",
                stats.mean.abs(),
                r,
                r * stats.std_error
            );
            return Ok(3);
        }
    }
    Ok(0)
}

fn run_verify_residual(
    args: &ResidualArgs,
    seed: u64,
    argv: &[String],
    started: Instant,
) -> Result<i32> {
    let (model, fk, model_desc) = args.model.load()?;
    let mut rundir = RunDir::prepare(args.out.out.as_deref(), args.out.overwrite)?;
    let grid = PDEGrid::new(args.dx, args.dt, args.t_max)
        .with_theta(0.5)
        .with_upwind(!args.centered);
    let sol = solve_cauchy(&model, &fk, args.m, &grid)?;
    let table = viscosity_residual(&sol, &model, &fk, args.levels)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dx", "dt", "n_nodes", "max_abs", "median_abs"])
        .map_err(|e| Error::Output(e.to_string()))?;
    for level in &table.levels {
        w.write_record(&[
            format_float(level.dx),
            format_float(level.dt),
            level.n_nodes.to_string(),
            format_float(level.max_abs),
            format_float(level.median_abs),
        ])
        .map_err(|e| Error::Output(e.to_string()))?;
        println!(
            "dx = {:.4e} dt = {:.4e}: median |r| = {:.4e}, max |r| = {:.4e} ({} nodes)",
            level.dx, level.dt, level.median_abs, level.max_abs, level.n_nodes
        );
    }
    let csv_text = csv_into_string(w)?;
    let json_text = pretty_json(&table)?;
    if rundir.is_active() {
        rundir.write("residual.csv", csv_text.as_bytes())?;
        rundir.write("residual.json", json_text.as_bytes())?;
    } else {
        print!("{json_text}");
    }
    let snapshot = json!({
        "model": model_desc,
        "f": fk.f.to_string(),
        "h": fk.h.to_string(),
        "grid": grid,
        "m": args.m,
        "levels": args.levels,
    });
    rundir.finish("verify", argv, seed, snapshot, started)?;
    let coarsest = table.levels.first().map(|l| l.median_abs).unwrap_or(0.0);
    let finest = table.levels.last().map(|l| l.median_abs).unwrap_or(0.0);
    if finest > coarsest {
        eprintln!(
            "verification failed: median residual grows under refinement \
             ({:.3e} at the coarsest level, {:.3e} at the finest)",
            coarsest, finest
        );
        return Ok(3);
    }
    Ok(0)
}

fn run_martingale(
    args: &MartingaleArgs,
    seed: u64,
    argv: &[String],
    started: Instant,
) -> Result<i32> {
    let (model, fk, model_desc) = args.model.load()?;
    let mut rundir = RunDir::prepare(args.out.out.as_deref(), args.out.overwrite)?;
    let x_star = parse_floats(&args.x, "x")?;
    let cfg = SimConfig::new(args.dt, args.t_star.max(args.dt), seed);
    let check = check_martingale(
        &model,
        &fk,
        args.t_star,
        &x_star,
        args.delta,
        args.outer,
        args.inner,
        &cfg,
    )?;
    let json_text = pretty_json(&check)?;
    let limit = args.k_sigma * check.combined_std_error;
    let pass = check.discrepancy.abs() <= limit;
    println!(
        "stopped average {:.6} vs direct {:.6}; discrepancy {:.3e} (limit {:.3e}): {}",
        check.lhs,
        check.rhs,
        check.discrepancy,
        limit,
        if pass { "ok" } else { "violated" }
    );
    if rundir.is_active() {
        rundir.write("martingale.json", json_text.as_bytes())?;
    } else {
        print!("{json_text}");
    }
    let snapshot = json!({
        "model": model_desc,
        "f": fk.f.to_string(),
        "h": fk.h.to_string(),
        "t_star": args.t_star,
        "x": x_star,
        "delta": args.delta,
        "outer": args.outer,
        "inner": args.inner,
        "k_sigma": args.k_sigma,
        "sim": cfg,
    });
    rundir.finish("martingale", argv, seed, snapshot, started)?;
    if !pass {
        eprintln!(
            "verification failed: |discrepancy| = {:.3e} exceeds {:.3e}",
            check.discrepancy.abs(),
            limit
        );
        return Ok(3);
    }
    Ok(0)
}

fn run_continuity(
    args: &ContinuityArgs,
    seed: u64,
    argv: &[String],
    started: Instant,
) -> Result<i32> {
    let (model, fk, model_desc) = args.model.load()?;
    let mut rundir = RunDir::prepare(args.out.out.as_deref(), args.out.overwrite)?;
    let t_grid = parse_floats(&args.t, "t")?;
    let t_last = t_grid.iter().cloned().fold(0.0, f64::max);
    let params = ContinuityBoundParams {
        c0: args.c0.or(fk.c0).unwrap_or(1.0),
        c: args.c,
        c_alpha: args.c_alpha,
        alpha: args.alpha,
        c_prime: args.c_prime,
        mode: if args.smooth {
            BoundMode::SmoothF
        } else {
            BoundMode::HolderF
        },
    };
    let cfg = SimConfig::new(args.dt, t_last.max(args.dt), seed);
    let report = continuity_check(&model, &fk, &params, args.x, &t_grid, args.paths, &cfg)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "t",
        "t_prime",
        "fk_diff",
        "u_diff",
        "gamma_bar",
        "combined_std_error",
        "violated",
    ])
    .map_err(|e| Error::Output(e.to_string()))?;
    for p in &report.pairs {
        w.write_record(&[
            format_float(p.t),
            format_float(p.t_prime),
            format_float(p.fk_diff),
            format_float(p.u_diff),
            format_float(p.gamma_bar),
            format_float(p.combined_std_error),
            p.violated.to_string(),
        ])
        .map_err(|e| Error::Output(e.to_string()))?;
    }
    let csv_text = csv_into_string(w)?;
    let json_text = pretty_json(&report)?;
    println!(
        "{} adjacent pair(s) checked, {} violation(s)",
        report.pairs.len(),
        report.n_violations
    );
    if rundir.is_active() {
        rundir.write("continuity.csv", csv_text.as_bytes())?;
        rundir.write("continuity.json", json_text.as_bytes())?;
    } else {
        print!("{json_text}");
    }
    let snapshot = json!({
        "model": model_desc,
        "f": fk.f.to_string(),
        "h": fk.h.to_string(),
        "x": args.x,
        "t_grid": t_grid,
        "paths": args.paths,
        "params": params,
        "sim": cfg,
    });
    rundir.finish("continuity", argv, seed, snapshot, started)?;
    if report.n_violations > 0 {
        eprintln!(
            "verification failed: {} pair(s) exceed the continuity modulus",
            report.n_violations
        );
        return Ok(3);
    }
    Ok(0)
}

struct McRow {
    t: f64,
    x: Vec<f64>,
    value: f64,
    std_error: f64,
}

fn resolve_run_file(path: &Path, default_name: &str) -> Result<PathBuf> {
    let file = if path.is_dir() {
        path.join(default_name)
    } else {
        path.to_path_buf()
    };
    if !file.is_file() {
        return Err(Error::Invalid(format!("no such file: {}", file.display())));
    }
    Ok(file)
}

fn read_mc_csv(path: &Path) -> Result<Vec<McRow>> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Invalid(format!("{} has no `{name}` column", path.display()))
        })
    };
    let (ti, xi, vi, si) = (col("t")?, col("x")?, col("value")?, col("std_error")?);
    let parse = |field: &str, what: &str| -> Result<f64> {
        field.parse::<f64>().map_err(|_| {
            Error::Invalid(format!("{}: bad {what} value `{field}`", path.display()))
        })
    };
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
        let mut x = Vec::new();
        for part in record[xi].split(';') {
            x.push(parse(part, "x")?);
        }
        rows.push(McRow {
            t: parse(&record[ti], "t")?,
            x,
            value: parse(&record[vi], "value")?,
            std_error: parse(&record[si], "std_error")?,
        });
    }
    if rows.is_empty() {
        return Err(Error::Invalid(format!(
            "{} contains no estimate rows",
            path.display()
        )));
    }
    Ok(rows)
}

const ALIGN_TOL: f64 = 1e-9;

/// Streams the solution CSV and picks out the value at each estimate's (t, x).
fn align_pde_values(path: &Path, rows: &[McRow]) -> Result<Vec<Option<f64>>> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?
        .clone();
    let n_cols = headers.len();
    if n_cols < 3 || headers.get(0) != Some("t") || headers.get(n_cols - 1) != Some("u") {
        return Err(Error::Invalid(format!(
            "{} does not look like a solution table (t, x.., u)",
            path.display()
        )));
    }
    let dim = n_cols - 2;
    let mut found: Vec<Option<f64>> = vec![None; rows.len()];
    for record in reader.records() {
        let record = record.map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
        let t: f64 = match record[0].parse() {
            Ok(v) => v,
            Err(_) => continue,
        };
        'rows: for (slot, row) in found.iter_mut().zip(rows) {
            if slot.is_some() || row.x.len() != dim || (t - row.t).abs() > ALIGN_TOL {
                continue;
            }
            for d in 0..dim {
                let xd: f64 = match record[1 + d].parse() {
                    Ok(v) => v,
                    Err(_) => continue 'rows,
                };
                if (xd - row.x[d]).abs() > ALIGN_TOL {
                    continue 'rows;
                }
            }
            if let Ok(u) = record[n_cols - 1].parse::<f64>() {
                *slot = Some(u);
            }
        }
    }
    Ok(found)
}

fn run_compare(args: &CompareArgs, seed: u64, argv: &[String], started: Instant) -> Result<i32> {
    let mut rundir = RunDir::prepare(args.out.out.as_deref(), args.out.overwrite)?;
    let mc_file = resolve_run_file(&args.mc, "estimates.csv")?;
    let pde_file = resolve_run_file(&args.pde, "solution.csv")?;
    let rows = read_mc_csv(&mc_file)?;
    let pde_values = align_pde_values(&pde_file, &rows)?;
    if let Some(i) = pde_values.iter().position(Option::is_none) {
        return Err(Error::GridMismatch(format!(
            "estimate at t = {}, x = {:?} has no matching node in {} (alignment tolerance {ALIGN_TOL:.0e})",
            rows[i].t,
            rows[i].x,
            pde_file.display()
        )));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "x", "mc_value", "mc_std_error", "pde_value", "abs_diff", "limit", "ok"])
        .map_err(|e| Error::Output(e.to_string()))?;
    let mut n_failed = 0usize;
    let mut max_abs_diff = 0.0f64;
    let mut worst: Option<(f64, Vec<f64>, f64)> = None;
    for (row, pde) in rows.iter().zip(&pde_values) {
        let pde = pde.unwrap();
        let diff = (row.value - pde).abs();
        let limit = (args.k_sigma * row.std_error).max(args.tol);
        let ok = diff <= limit;
        if !ok {
            n_failed += 1;
        }
        if diff > max_abs_diff {
            max_abs_diff = diff;
            worst = Some((row.t, row.x.clone(), diff));
        }
        let x = row
            .x
            .iter()
            .map(|v| format_float(*v))
            .collect::<Vec<_>>()
            .join(";");
        w.write_record(&[
            format_float(row.t),
            x,
            format_float(row.value),
            format_float(row.std_error),
            format_float(pde),
            format_float(diff),
            format_float(limit),
            ok.to_string(),
        ])
        .map_err(|e| Error::Output(e.to_string()))?;
    }
    let csv_text = csv_into_string(w)?;
    let summary = json!({
        "n_points": rows.len(),
        "n_failed": n_failed,
        "max_abs_diff": max_abs_diff,
        "worst": worst.map(|(t, x, d)| json!({ "t": t, "x": x, "abs_diff": d })),
        "k_sigma": args.k_sigma,
        "tol": args.tol,
        "passed": n_failed == 0,
    });
    let json_text = pretty_json(&summary)?;
    println!(
        "{} point(s) aligned, {} outside the band; max |diff| = {:.4e}",
        rows.len(),
        n_failed,
        max_abs_diff
    );
    if rundir.is_active() {
        rundir.write("compare.csv", csv_text.as_bytes())?;
        rundir.write("compare.json", json_text.as_bytes())?;
    } else {
        print!("{json_text}");
    }
    let snapshot = json!({
        "mc": mc_file.display().to_string(),
        "pde": pde_file.display().to_string(),
        "tol": args.tol,
        "k_sigma": args.k_sigma,
    });
    rundir.finish("compare", argv, seed, snapshot, started)?;
    if n_failed > 0 {
        eprintln!(
            "verification failed: {n_failed} point(s) differ by more than max({} x std_error, {})",
            args.k_sigma, args.tol
        );
        return Ok(3);
    }
    Ok(0)
}

fn run_catalog(args: &CatalogArgs, seed: u64, argv: &[String], started: Instant) -> Result<i32> {
    for entry in catalog() {
        let behavior = if entry.explosive {
            "explosive"
        } else {
            "conservative"
        };
        println!("{:<30} {:<13} {}", entry.name, behavior, entry.summary);
    }
    if let Some(dir) = &args.emit {
        let mut rundir = RunDir::prepare(Some(dir), args.overwrite)?;
        let mut names = Vec::new();
        for entry in catalog() {
            let file = format!("{}.toml", entry.name);
            rundir.write(&file, entry.config.as_bytes())?;
            names.push(entry.name);
        }
        println!("wrote {} config file(s) to {}", names.len(), dir.display());
        let snapshot = json!({ "entries": names });
        rundir.finish("catalog", argv, seed, snapshot, started)?;
    }
    Ok(0)
}
