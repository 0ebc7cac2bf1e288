use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_glvreduce");

fn glvreduce(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).args(args).current_dir(dir).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write_json(dir: &Path, name: &str, v: &Value) {
    fs::write(dir.join(name), serde_json::to_vec_pretty(v).unwrap()).unwrap();
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_json(d, "two.json", &json!({"b": [1.0, 0.8], "A": [[-1.0, 0.2], [-0.1, -0.9]], "x0": [0.3, 0.6]}));
    write_json(
        d,
        "dense3.json",
        &json!({"b": [1.0, 0.8, 0.9], "A": [[-1.0, 0.2, 0.1], [-0.1, -0.9, 0.2], [0.1, 0.1, -1.0]], "x0": [0.3, 0.6, 0.4]}),
    );
    write_json(
        d,
        "logistic.json",
        &json!({"b": [1.0, 0.6], "A": [[-1.0, 0.0], [0.0, -2.0]], "x0": [0.05, 0.9], "labels": ["u", "v"]}),
    );
    dir
}

#[test]
fn help_lists_exit_codes() {
    let out = Command::new(BIN).arg("--help").output().unwrap();
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("Exit codes:"));
    for n in 0..=10 {
        assert!(text.contains(&format!("\n  {n} ")), "code {n} missing from help");
    }
    let out = Command::new(BIN).args(["verify", "--help"]).output().unwrap();
    assert!(String::from_utf8(out.stdout).unwrap().contains("Exit codes:"));
}

#[test]
fn simulate_matches_logistic_solution() {
    let dir = setup();
    let out = glvreduce(dir.path(), &["simulate", "--model", "logistic.json", "--out", "traj.csv"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("traj.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,u,v"));
    let last: Vec<f64> = lines.last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(last[0], 10.0);
    let exact = |b: f64, a: f64, x0: f64| b * x0 * (b * 10.0f64).exp() / (b - a * x0 * ((b * 10.0f64).exp() - 1.0));
    assert!((last[1] - exact(1.0, -1.0, 0.05)).abs() <= 1e-8);
    assert!((last[2] - exact(0.6, -2.0, 0.9)).abs() <= 1e-8);
}

#[test]
fn invalid_inputs_map_to_distinct_codes() {
    let dir = setup();
    let d = dir.path();
    write_json(d, "neg.json", &json!({"b": [1.0, 0.8], "A": [[-1.0, 0.2], [-0.1, -0.9]], "x0": [-0.3, 0.6]}));
    let out = glvreduce(d, &["simulate", "--model", "neg.json", "--out", "neg.csv"]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("x0[1]"));
    assert!(!d.join("neg.csv").exists());

    fs::write(d.join("broken.json"), "{\"b\": [1.0,").unwrap();
    assert_eq!(code(&glvreduce(d, &["simulate", "--model", "broken.json", "--out", "x.csv"])), 3);
    assert_eq!(code(&glvreduce(d, &["simulate", "--model", "missing.json", "--out", "x.csv"])), 7);
    assert_eq!(code(&glvreduce(d, &["simulate", "--model", "two.json", "--dt", "20", "--out", "x.csv"])), 2);
    assert_eq!(code(&glvreduce(d, &["simulate", "--bogus"])), 2);
    assert_eq!(code(&glvreduce(d, &["rho", "--S", "3"])), 2);
    assert_eq!(code(&glvreduce(d, &["verify", "--model", "two.json", "--retained", "3", "--report", "r.json"])), 2);
    assert!(!d.join("x.csv").exists());
}

#[test]
fn verify_modes_pass_on_two_species() {
    let dir = setup();
    let d = dir.path();
    let out = glvreduce(d, &["verify", "--model", "two.json", "--retained", "1", "--report", "mem.json"]);
    assert_eq!(code(&out), 0);
    let rep: Value = serde_json::from_slice(&fs::read(d.join("mem.json")).unwrap()).unwrap();
    assert_eq!(rep["mode"], "memory");
    assert_eq!(rep["pass"], true);
    assert_eq!(rep["species"].as_array().unwrap().len(), 2);
    assert!(rep.get("runtime_seconds").is_none());

    for retained in ["1", "2"] {
        let out = glvreduce(
            d,
            &["verify", "--model", "two.json", "--retained", retained, "--method", "algebraic", "--tol-residual", "1e-10", "--report", "alg.json"],
        );
        assert_eq!(code(&out), 0);
        let rep: Value = serde_json::from_slice(&fs::read(d.join("alg.json")).unwrap()).unwrap();
        assert!(rep["residual"]["max_rel"].as_f64().unwrap() <= 1e-10);
    }

    let out = glvreduce(d, &["verify", "--model", "two.json", "--retained", "1", "--timing", "--report", "t.json"]);
    assert_eq!(code(&out), 0);
    let rep: Value = serde_json::from_slice(&fs::read(d.join("t.json")).unwrap()).unwrap();
    assert!(rep["runtime_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn tolerance_breach_exits_one() {
    let dir = setup();
    let out = glvreduce(
        dir.path(),
        &["verify", "--model", "two.json", "--retained", "1", "--dt", "0.5", "--tol-retained", "1e-16", "--report", "r.json"],
    );
    assert_eq!(code(&out), 1);
    let rep: Value = serde_json::from_slice(&fs::read(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(rep["pass"], false);
}

#[test]
fn dense_three_species_is_infeasible_and_names_entry() {
    let dir = setup();
    let d = dir.path();
    let out = glvreduce(d, &["verify", "--model", "dense3.json", "--retained", "1", "--report", "r.json"]);
    assert_eq!(code(&out), 5);
    assert!(String::from_utf8_lossy(&out.stderr).contains("a(1,3)"));
    let rep: Value = serde_json::from_slice(&fs::read(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(rep["pass"], false);
    assert_eq!(rep["plan"]["violations"][0]["entry"], json!([1, 3]));

    assert_eq!(code(&glvreduce(d, &["analyze", "--model", "dense3.json", "--retained", "1", "--out", "a.json"])), 5);
    let out = glvreduce(d, &["verify", "--model", "dense3.json", "--retained", "1", "--zero", "1,3", "--report", "z.json"]);
    assert_eq!(code(&out), 0);
    let rep: Value = serde_json::from_slice(&fs::read(d.join("z.json")).unwrap()).unwrap();
    assert_eq!(rep["settings"]["zeroed"], json!([[1, 3]]));
}

#[test]
fn analyze_reports_counts() {
    let dir = setup();
    let out = glvreduce(dir.path(), &["analyze", "--model", "dense3.json", "--retained", "1", "--zero", "1,3"]);
    assert_eq!(code(&out), 0);
    let rep: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rep["S"], 3);
    assert_eq!(rep["s"], 1);
    assert_eq!(rep["zero_set_size"], 1);
    assert_eq!(rep["rho_exact"], "1/9");
    assert_eq!(rep["feasible"], true);
    assert_eq!(rep["zeroed"], json!([[1, 3]]));
}

#[test]
fn rho_outputs() {
    let dir = setup();
    let d = dir.path();
    let out = glvreduce(d, &["rho", "--S", "3", "--s", "1"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "1/9 ≈ 0.111111\n");
    let out = glvreduce(d, &["rho", "--limit", "0"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "0.5\n");
    assert_eq!(code(&glvreduce(d, &["rho", "--curve", "101", "--out", "curve.csv"])), 0);
    let csv = fs::read_to_string(d.join("curve.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 102);
    assert_eq!(lines[0], "alpha,rho_limit");
    assert_eq!(lines[1], "0.0,0.5");
    assert_eq!(lines[101], "1.0,0.0");
}

#[test]
fn identity_reduction_has_no_steps() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(code(&glvreduce(d, &["reduce", "--model", "dense3.json", "--retained", "1,2,3", "--out", "id.json"])), 0);
    let doc: Value = serde_json::from_slice(&fs::read(d.join("id.json")).unwrap()).unwrap();
    assert!(doc["steps"].as_array().unwrap().is_empty());
    assert_eq!(code(&glvreduce(d, &["solve-reduced", "--reduced", "id.json", "--t-end", "1", "--out", "t.csv"])), 0);
}

#[test]
fn corrupted_reduced_system_is_rejected() {
    let dir = setup();
    let d = dir.path();
    let args = ["reduce", "--model", "dense3.json", "--retained", "1", "--zero", "1,3", "--out", "r.json"];
    assert_eq!(code(&glvreduce(d, &args)), 0);
    let mut doc: Value = serde_json::from_slice(&fs::read(d.join("r.json")).unwrap()).unwrap();
    doc["steps"][1]["rate_depends_on"].as_array_mut().unwrap().push(json!({"step": 0, "term": "y"}));
    write_json(d, "cyclic.json", &doc);
    let out = glvreduce(d, &["solve-reduced", "--reduced", "cyclic.json", "--out", "t.csv"]);
    assert_eq!(code(&out), 9);
    assert!(String::from_utf8_lossy(&out.stderr).contains("cyclic"));
    assert!(!d.join("t.csv").exists());
}

#[test]
fn compare_rejects_mismatched_model() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(code(&glvreduce(d, &["reduce", "--model", "two.json", "--retained", "1", "--out", "r.json"])), 0);
    assert_eq!(code(&glvreduce(d, &["solve-reduced", "--reduced", "r.json", "--out", "t.csv"])), 0);
    let out = glvreduce(
        d,
        &["compare", "--model", "logistic.json", "--reduced", "r.json", "--trajectory", "t.csv", "--report", "c.json"],
    );
    assert_eq!(code(&out), 9);
}

#[test]
fn batch_runs_jobs_in_parallel() {
    let dir = setup();
    let d = dir.path();
    write_json(
        d,
        "manifest.json",
        &json!([
            {"model": "two.json", "retained": [1], "report": "b1.json"},
            {"model": "two.json", "retained": [1], "method": "algebraic", "report": "b2.json"},
            {"model": "dense3.json", "retained": [1], "zero": [[1, 3]], "report": "b3.json"}
        ]),
    );
    let out = glvreduce(d, &["batch", "--manifest", "manifest.json", "--jobs", "3", "--t-end", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["b1.json", "b2.json", "b3.json"] {
        assert!(d.join(f).exists());
    }

    write_json(d, "bad.json", &json!([{"model": "dense3.json", "retained": [1], "report": "b4.json"}]));
    assert_eq!(code(&glvreduce(d, &["batch", "--manifest", "bad.json", "--t-end", "2"])), 1);
}

#[test]
fn log_level_follows_environment() {
    let dir = setup();
    let out = Command::new(BIN)
        .args(["simulate", "--model", "two.json", "--t-end", "1", "--out", "x.csv"])
        .env("GLVREDUCE_LOG", "info")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&out.stderr).contains("integrated 1000 steps"));
}

#[test]
fn algebraic_solve_tracks_detailed_solution() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(code(&glvreduce(d, &["algebraic", "--model", "two.json", "--out", "alg.csv"])), 0);
    assert_eq!(code(&glvreduce(d, &["simulate", "--model", "two.json", "--out", "det.csv"])), 0);
    let col = |f: &str| -> Vec<f64> {
        fs::read_to_string(d.join(f))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect()
    };
    let (a, b) = (col("alg.csv"), col("det.csv"));
    assert_eq!(a.len(), b.len());
    let err = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(err <= 1e-8, "{err}");
}
