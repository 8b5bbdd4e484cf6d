use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use relu_interp::fixtures::{abs_data, abs_net, triangle_data, triangle_faces};
use relu_interp::{build_interp_matrix, rank_and_singularity, ConvexPolytope, DEFAULT_RANK_TOL};
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    run_env(args, &[])
}

fn run_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_relu-interp"));
    cmd.args(args).env_remove("RELU_INTERP_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string(value).unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct AbsFiles {
    _dir: TempDir,
    net: PathBuf,
    data: PathBuf,
    dir: PathBuf,
}

fn abs_files() -> AbsFiles {
    let dir = TempDir::new().unwrap();
    let net = write_json(dir.path(), "net.json", &abs_net());
    let data = write_json(dir.path(), "data.json", &abs_data());
    let path = dir.path().to_path_buf();
    AbsFiles { _dir: dir, net, data, dir: path }
}

#[test]
fn abs_matrix_as_csv() {
    let f = abs_files();
    let o = run(&["matrix", "build", "--network", s(&f.net), "--data", s(&f.data), "--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<Vec<f64>> = stdout(&o)
        .lines()
        .map(|l| l.split(',').map(|v| v.trim().parse().unwrap()).collect())
        .collect();
    assert_eq!(rows, vec![vec![0.0, 1.0], vec![0.0, 0.0], vec![2.0, 0.0]]);
    assert!(stderr(&o).contains("3x2"));
}

#[test]
fn build_then_analyze_matches_library() {
    let f = abs_files();
    let matrix = f.dir.join("m.json");
    let o = run(&["matrix", "build", "--network", s(&f.net), "--data", s(&f.data), "--out", s(&matrix)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("interpolation matrix"));

    let o = run(&["matrix", "analyze", "--matrix", s(&matrix)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let m = build_interp_matrix(&abs_net(), &abs_data(), 0, relu_interp::DEFAULT_TAU_ACT).unwrap();
    let expected = rank_and_singularity(m.values(), DEFAULT_RANK_TOL);
    assert_eq!(report["rank"].as_u64().unwrap() as usize, expected.rank);
    assert_eq!(report["singular"].as_bool().unwrap(), expected.singular);
    assert_eq!(report["min_singular_value"].as_f64().unwrap(), expected.min_singular_value);
    assert_eq!(report["tol_used"].as_f64().unwrap(), expected.tol_used);
    assert_eq!(report["sparsity"].as_f64().unwrap(), 4.0 / 6.0);
}

#[test]
fn csv_matrix_accepted_by_analyze() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("m.csv");
    fs::write(&path, "1,0\n0,1\n").unwrap();
    let o = run(&["matrix", "analyze", "--matrix", s(&path), "--input-dim", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["rank"], 2);
    assert_eq!(report["singular"], false);
}

#[test]
fn overparam_without_nonsingular_selection_fails() {
    let dir = TempDir::new().unwrap();
    let m = dir.path().join("m.csv");
    fs::write(&m, "1,1,0\n1,1,0\n").unwrap();
    let y = dir.path().join("y.json");
    fs::write(&y, "[1, 2]").unwrap();
    let o = run(&["solve", "overparam", "--matrix", s(&m), "--targets", s(&y)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("no nonsingular combination"));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["solutions"].as_array().unwrap().len(), 0);
}

#[test]
fn overparam_solves_with_free_values() {
    let dir = TempDir::new().unwrap();
    let m = dir.path().join("m.csv");
    fs::write(&m, "1,0,1\n0,1,1\n").unwrap();
    let y = dir.path().join("y.csv");
    fs::write(&y, "2\n3\n").unwrap();
    let o = run(&["solve", "overparam", "--matrix", s(&m), "--targets", s(&y), "--free", "2=1", "--all"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let solutions = report["solutions"].as_array().unwrap();
    assert!(!solutions.is_empty());
}

#[test]
fn triangular_solve_singular_block_exits_3() {
    let dir = TempDir::new().unwrap();
    let m = dir.path().join("m.csv");
    fs::write(&m, "1,0\n1,0\n").unwrap();
    let y = dir.path().join("y.json");
    fs::write(&y, "[1, 1]").unwrap();
    let o = run(&["solve", "triangular", "--matrix", s(&m), "--targets", s(&y), "--blocks", "1,1"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    fs::write(&m, "2,0\n1,4\n").unwrap();
    let o = run(&["solve", "triangular", "--matrix", s(&m), "--targets", s(&y), "--blocks", "1,1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(out["alpha"], serde_json::json!([0.5, 0.125]));
}

#[test]
fn classifier_separates_triangle_points() {
    let dir = TempDir::new().unwrap();
    let poly = write_json(dir.path(), "poly.json", &ConvexPolytope::new(triangle_faces()).unwrap());
    let data = write_json(dir.path(), "data.json", &triangle_data());
    let net = dir.path().join("net.json");
    let o = run(&["construct", "classifier", "--polytope", s(&poly), "--data", s(&data), "--out", s(&net)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("5/5 points separated"), "{}", stdout(&o));

    let o = run(&["sparsity", "report", "--network", s(&net), "--data", s(&data), "--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("layer,sparsity\n"));

    let o = run(&["route", "collapse", "--network", s(&net), "--data", s(&data), "--subdomain", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(report["duplicates"].is_array());
}

#[test]
fn validation_errors_exit_2() {
    let f = abs_files();
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["matrix", "build", "--network", s(&f.net)]).status.code(), Some(2));

    let bad = f.dir.join("bad.json");
    fs::write(&bad, r#"{"layers": "nope"}"#).unwrap();
    let o = run(&["matrix", "build", "--network", s(&bad), "--data", s(&f.data)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("invalid network"));

    let missing = f.dir.join("missing.json");
    assert_eq!(run(&["matrix", "build", "--network", s(&missing), "--data", s(&f.data)]).status.code(), Some(2));
    assert_eq!(
        run(&["matrix", "build", "--network", s(&f.net), "--data", s(&f.data), "--layer", "7"]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["disentangle", "check", "--network", s(&f.net), "--data", s(&f.data), "--format", "csv"]).status.code(),
        Some(2)
    );
    assert_eq!(run_env(&["matrix", "analyze", "--matrix", s(&f.net)], &[("RELU_INTERP_THREADS", "many")]).status.code(), Some(2));
}

#[test]
fn help_exits_0() {
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("matrix"));
}

#[test]
fn seeded_runs_reproduce() {
    let f = abs_files();
    let explore = |seed: &str, threads: &str| {
        let o = run_env(
            &["decompose", "explore", "--data", s(&f.data), "--cuts", "2", "--samples", "50", "--seed", seed],
            &[("RELU_INTERP_THREADS", threads)],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    assert_eq!(explore("7", "1"), explore("7", "4"));
    assert_eq!(explore("7", "0"), explore("7", "2"));

    let train = |seed: &str| {
        let o = run(&[
            "train", "run", "--hidden", "3", "--data", s(&f.data), "--steps", "20", "--seed", seed, "--format", "csv",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    let a = train("11");
    assert_eq!(a, train("11"));
    assert_ne!(a, train("12"));
    assert!(a.starts_with("step,loss"));
}

#[test]
fn diverging_training_exits_3() {
    let f = abs_files();
    let o = run(&["train", "run", "--hidden", "4,4", "--data", s(&f.data), "--lr", "100", "--steps", "200"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
}

#[test]
fn spacetime_search_solves_abs() {
    let f = abs_files();
    let o = run(&["search", "spacetime", "--network", s(&f.net), "--data", s(&f.data), "--steps", "5", "--budget", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("solved"));
}

#[test]
fn mode_extract_and_normalize() {
    let f = abs_files();
    let matrix = f.dir.join("m.csv");
    fs::write(&matrix, "1,0\n1,2\n").unwrap();
    let mode = f.dir.join("mode.json");
    let o = run(&["mode", "extract", "--matrix", s(&matrix), "--rows", "0;1", "--cols", "0;1", "--out", s(&mode)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let extracted: serde_json::Value = serde_json::from_str(&fs::read_to_string(&mode).unwrap()).unwrap();
    let grid = f.dir.join("grid.json");
    fs::write(&grid, extracted["mode"].to_string()).unwrap();
    let o = run(&["mode", "normalize", "--mode", s(&grid)]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn disentangle_reports_verdict() {
    let f = abs_files();
    let o = run(&["disentangle", "check", "--network", s(&f.net), "--data", s(&f.data)]);
    // The abs fixture has no labels.
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let data = write_json(&f.dir, "tri.json", &triangle_data());
    let m = f.dir.join("codes.csv");
    fs::write(&m, "1,0\n1,0\n0,1\n0,1\n0,1\n").unwrap();
    let o = run(&["disentangle", "check", "--matrix", s(&m), "--data", s(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["disentangled"], true);
}
