//! End-to-end tests of the command-line interface: exit codes, output files,
//! manifests, and replay reproducibility.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_explode"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Fresh per-test scratch directory under the target-adjacent temp root.
fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("explode-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).expect("scratch dir");
    dir
}

/// Second CSV line of an estimates table, split into fields.
fn first_row(csv_text: &str) -> Vec<String> {
    csv_text
        .lines()
        .nth(1)
        .expect("a data row")
        .split(',')
        .map(str::to_string)
        .collect()
}

#[test]
fn estimate_example_prints_a_csv_row_in_unit_range() {
    let out = run(&[
        "estimate",
        "--model",
        "bm_unit_interval",
        "--x",
        "0.5",
        "--t",
        "0.1",
        "--paths",
        "100000",
        "--seed",
        "7",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("t,x,value,std_error,"), "got: {text}");
    let row = first_row(&text);
    let value: f64 = row[2].parse().unwrap();
    assert!((0.0..=1.0).contains(&value), "value {value} outside [0,1]");
    assert_eq!(row[6], "7");
}

#[test]
fn missing_model_is_a_usage_error() {
    let out = run(&["estimate", "--x", "0.5", "--t", "0.1"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--model"), "stderr: {}", stderr(&out));
}

#[test]
fn unknown_flags_and_subcommands_are_usage_errors() {
    let out = run(&["estimate", "--model", "bm_unit_interval", "--x", "0.5", "--t", "0.1", "--bogus"]);
    assert_eq!(code(&out), 1);
    let out = run(&["frobnicate"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn help_and_version_exit_cleanly() {
    let out = run(&["--help"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("estimate"));
    let out = run(&["--version"]);
    assert_eq!(code(&out), 0);
}

#[test]
fn unknown_catalog_name_is_a_usage_error() {
    let out = run(&["estimate", "--model", "no_such_model", "--x", "0.5", "--t", "0.1"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("unknown catalog model"));
}

#[test]
fn constant_potential_factorizes_with_a_shared_seed() {
    let args_tail = [
        "--model",
        "bm_unit_interval_killed",
        "--x",
        "0.5",
        "--t",
        "0.2",
        "--paths",
        "20000",
        "--seed",
        "11",
    ];
    let u_out = run(&[&["estimate"], &args_tail[..]].concat());
    let fk_out = run(&[&["fk"], &args_tail[..]].concat());
    assert_eq!(code(&u_out), 0);
    assert_eq!(code(&fk_out), 0);
    let u: f64 = first_row(&stdout(&u_out))[2].parse().unwrap();
    let fk: f64 = first_row(&stdout(&fk_out))[2].parse().unwrap();
    let expected = (-0.2f64).exp() * u;
    let rel = (fk - expected).abs() / expected;
    assert!(rel <= 1e-12, "fk {fk} vs e^(-t) u {expected} (rel {rel:.2e})");
}

#[test]
fn manifest_replay_reproduces_outputs_bitwise() {
    let dir = scratch("replay");
    let run_a = dir.join("a");
    let run_b = dir.join("b");
    let out = run(&[
        "estimate",
        "--model",
        "bm_unit_interval",
        "--x",
        "0.5",
        "--t",
        "0.05,0.1",
        "--paths",
        "5000",
        "--out",
        run_a.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_a.join("manifest.json")).unwrap()).unwrap();
    let seed = manifest["seed"].as_u64().expect("recorded seed");
    let replay: Vec<String> = manifest["replay_args"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    assert!(replay.iter().any(|a| a == &seed.to_string()));

    let out = bin()
        .args(&replay)
        .arg("--out")
        .arg(&run_b)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let a = fs::read(run_a.join("estimates.csv")).unwrap();
    let b = fs::read(run_b.join("estimates.csv")).unwrap();
    assert_eq!(a, b, "replayed CSV differs");
    let aj = fs::read(run_a.join("estimates.json")).unwrap();
    let bj = fs::read(run_b.join("estimates.json")).unwrap();
    assert_eq!(aj, bj, "replayed JSON differs");

    for d in [&run_a, &run_b] {
        let manifests = fs::read_dir(d)
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name() == "manifest.json")
            .count();
        assert_eq!(manifests, 1, "exactly one manifest in {}", d.display());
    }
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let dir = scratch("workers");
    let mut csvs = Vec::new();
    for workers in ["1", "4"] {
        let run_dir = dir.join(format!("w{workers}"));
        let out = run(&[
            "estimate",
            "--model",
            "ou_line",
            "--x",
            "0.0",
            "--t",
            "0.5",
            "--paths",
            "8000",
            "--seed",
            "3",
            "--workers",
            workers,
            "--out",
            run_dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
        csvs.push(fs::read(run_dir.join("estimates.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1], "worker count changed the estimates");
}

#[test]
fn occupied_output_directories_need_overwrite() {
    let dir = scratch("overwrite");
    let run_dir = dir.join("r");
    let args = [
        "estimate",
        "--model",
        "bm_unit_interval",
        "--x",
        "0.5",
        "--t",
        "0.1",
        "--paths",
        "200",
        "--seed",
        "1",
        "--out",
        run_dir.to_str().unwrap(),
    ];
    assert_eq!(code(&run(&args)), 0);
    let second = run(&args);
    assert_eq!(code(&second), 1);
    assert!(stderr(&second).contains("--overwrite"));
    let third = run(&[&args[..], &["--overwrite"]].concat());
    assert_eq!(code(&third), 0);
}

#[test]
fn solve_writes_solution_files_and_requires_out() {
    let no_out = run(&[
        "solve",
        "--model",
        "bm_unit_interval",
        "--t-max",
        "0.1",
    ]);
    assert_eq!(code(&no_out), 1);
    assert!(stderr(&no_out).contains("--out"));

    let dir = scratch("solve");
    let run_dir = dir.join("pde");
    let out = run(&[
        "solve",
        "--model",
        "bm_unit_interval",
        "--dx",
        "0.05",
        "--dt",
        "0.001",
        "--t-max",
        "0.1",
        "--theta",
        "0.5",
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let csv_text = fs::read_to_string(run_dir.join("solution.csv")).unwrap();
    assert!(csv_text.starts_with("t,x,u"), "got: {csv_text:.40}");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    let outputs: Vec<&str> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert!(outputs.contains(&"solution.csv"));
    assert!(outputs.contains(&"solution.json"));
}

#[test]
fn unbounded_solve_without_truncation_is_a_usage_error() {
    let dir = scratch("solve-unbounded");
    let out = run(&[
        "solve",
        "--model",
        "ou_line",
        "--t-max",
        "0.1",
        "--out",
        dir.join("r").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("truncation"));
}

/// Shared setup for the compare tests: one MC run and one solved field.
fn compare_fixture(tag: &str, x: &str) -> (PathBuf, PathBuf, PathBuf) {
    let dir = scratch(tag);
    let mc = dir.join("mc");
    let pde = dir.join("pde");
    let out = run(&[
        "estimate",
        "--model",
        "bm_unit_interval",
        "--x",
        x,
        "--t",
        "0,0.2",
        "--paths",
        "20000",
        "--dt",
        "0.001",
        "--seed",
        "11",
        "--out",
        mc.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let out = run(&[
        "solve",
        "--model",
        "bm_unit_interval",
        "--dx",
        "0.05",
        "--dt",
        "0.001",
        "--t-max",
        "0.2",
        "--theta",
        "0.5",
        "--out",
        pde.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    (dir, mc, pde)
}

#[test]
fn compare_passes_inside_an_explicit_tolerance() {
    let (dir, mc, pde) = compare_fixture("compare-pass", "0.5");
    let cmp = dir.join("cmp");
    let out = run(&[
        "compare",
        "--mc",
        mc.to_str().unwrap(),
        "--pde",
        pde.to_str().unwrap(),
        "--tol",
        "0.05",
        "--out",
        cmp.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cmp.join("compare.json")).unwrap()).unwrap();
    assert_eq!(summary["n_points"], 2);
    assert_eq!(summary["passed"], true);
}

#[test]
fn compare_flags_the_time_discretization_bias_at_a_strict_band() {
    // At dt = 1e-3 the grid-time exit monitoring overestimates survival by
    // about 4e-2 at t = 0.2, far outside 3 standard errors of 2e4 paths.
    let (dir, mc, pde) = compare_fixture("compare-strict", "0.5");
    let cmp = dir.join("cmp");
    let out = run(&[
        "compare",
        "--mc",
        mc.to_str().unwrap(),
        "--pde",
        pde.to_str().unwrap(),
        "--out",
        cmp.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("verification failed"));
    // outputs and the manifest are still written for the failed check
    assert!(cmp.join("compare.csv").is_file());
    assert!(cmp.join("manifest.json").is_file());
}

#[test]
fn compare_rejects_points_off_the_grid() {
    // x = 0.517 is not a node of the dx = 0.05 grid
    let (dir, mc, pde) = compare_fixture("compare-misaligned", "0.517");
    let out = run(&[
        "compare",
        "--mc",
        mc.to_str().unwrap(),
        "--pde",
        pde.to_str().unwrap(),
        "--out",
        dir.join("cmp").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("no matching node"));
}

#[test]
fn feller_writes_the_classification() {
    let dir = scratch("feller");
    let run_dir = dir.join("r");
    let out = run(&[
        "feller",
        "--model",
        "cubic_drift_line",
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("ExplosiveBoth"));
    let report = fs::read_to_string(run_dir.join("feller.json")).unwrap();
    assert!(report.contains("\"ExplosiveBoth\""));
    assert!(run_dir.join("feller.csv").is_file());
}

#[test]
fn catalog_lists_and_emits_usable_configs() {
    let listing = run(&["catalog"]);
    assert_eq!(code(&listing), 0);
    assert!(stdout(&listing).contains("bm_unit_interval"));
    assert!(stdout(&listing).contains("conservative"));

    let dir = scratch("catalog");
    let emitted = dir.join("configs");
    let out = run(&["catalog", "--emit", emitted.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let config = emitted.join("bm_unit_interval.toml");
    assert!(config.is_file());
    assert!(emitted.join("manifest.json").is_file());

    let est = run(&[
        "estimate",
        "--config",
        config.to_str().unwrap(),
        "--x",
        "0.5",
        "--t",
        "0.1",
        "--paths",
        "500",
        "--seed",
        "2",
    ]);
    assert_eq!(code(&est), 0, "stderr: {}", stderr(&est));
}

#[test]
fn residual_table_contracts_on_the_interval_model() {
    let dir = scratch("residual");
    let run_dir = dir.join("r");
    let out = run(&[
        "verify",
        "residual",
        "--model",
        "bm_unit_interval",
        "--dx",
        "0.03125",
        "--dt",
        "0.0009765625",
        "--t-max",
        "1.0",
        "--levels",
        "3",
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let table: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("residual.json")).unwrap()).unwrap();
    let medians: Vec<f64> = table["levels"]
        .as_array()
        .unwrap()
        .iter()
        .map(|l| l["median_abs"].as_f64().unwrap())
        .collect();
    assert_eq!(medians.len(), 3);
    assert!(
        medians.windows(2).all(|w| w[1] < w[0]),
        "medians do not contract: {medians:?}"
    );
}

#[test]
fn ito_residual_mean_stays_within_the_requested_band() {
    let dir = scratch("ito");
    let run_dir = dir.join("r");
    let out = run(&[
        "verify",
        "ito",
        "--model",
        "bm_unit_interval",
        "--t-star",
        "0.2",
        "--x",
        "0.5",
        "--delta",
        "0.1",
        "--dt",
        "0.004",
        "--paths",
        "20000",
        "--seed",
        "2024",
        "--max-mean-se",
        "5",
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let stats: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("ito.json")).unwrap()).unwrap();
    assert!(stats["mean"].is_number());
    assert!(stats["n_paths"].as_u64().unwrap() > 0);
}

#[test]
fn martingale_check_passes_on_the_interval_model() {
    let dir = scratch("martingale");
    let run_dir = dir.join("r");
    let out = run(&[
        "martingale",
        "--model",
        "bm_unit_interval",
        "--t-star",
        "0.2",
        "--x",
        "0.5",
        "--delta",
        "0.05",
        "--dt",
        "0.001",
        "--outer",
        "400",
        "--inner",
        "400",
        "--seed",
        "5",
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("ok"));
    assert!(run_dir.join("martingale.json").is_file());
}

#[test]
fn continuity_sweep_reports_no_violations() {
    let dir = scratch("continuity");
    let run_dir = dir.join("r");
    let out = run(&[
        "continuity",
        "--model",
        "bm_unit_interval",
        "--x",
        "0.3",
        "--t",
        "0.1,0.15,0.2,0.3",
        "--paths",
        "4000",
        "--dt",
        "0.002",
        "--seed",
        "4242",
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("continuity.json")).unwrap())
            .unwrap();
    assert_eq!(report["n_violations"], 0);
    assert_eq!(report["pairs"].as_array().unwrap().len(), 3);
}

#[test]
fn minimal_sweep_converges_on_the_conservative_line_model() {
    let dir = scratch("minimal");
    let run_dir = dir.join("r");
    let out = run(&[
        "minimal",
        "--model",
        "bm_line",
        "--dx",
        "0.25",
        "--dt",
        "0.01",
        "--t-max",
        "0.25",
        "--m-range",
        "1:4",
        "--tol",
        "0.001",
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("convergence.json")).unwrap())
            .unwrap();
    assert_eq!(report["converged"], true);
    let diffs: Vec<f64> = report["sup_diffs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(diffs.len(), 3);
    assert!(diffs.last().unwrap() < &1e-3);
}
