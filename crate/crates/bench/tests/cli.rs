use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_umdo-bench")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn generate(dir: &TempDir, name: &str, seed: &str) -> (String, String) {
    let path = dir.path().join(name);
    let path = path.to_str().unwrap().to_string();
    let o = bench(&[
        "generate",
        "--disciplines",
        "2",
        "--shared",
        "1",
        "--local",
        "2,2",
        "--coupling",
        "3,3",
        "--alpha-t",
        "0.5",
        "--seed",
        seed,
        "--out",
        &path,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    (path, stdout(&o).trim().to_string())
}

fn json_file(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn generate_is_deterministic_and_prints_the_digest() {
    let dir = TempDir::new().unwrap();
    let (p1, d1) = generate(&dir, "a.json", "42");
    let (_, d2) = generate(&dir, "b.json", "42");
    let (_, d3) = generate(&dir, "c.json", "43");
    assert_eq!(d1, d2);
    assert_ne!(d1, d3);
    assert_eq!(d1.len(), 64);
    assert_eq!(json_file(Path::new(&p1))["version"], 1);
}

#[test]
fn invalid_flags_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.json");
    let out = out.to_str().unwrap();
    assert_eq!(bench(&["generate", "--alpha-t", "1.5", "--out", out]).status.code(), Some(2));
    assert_eq!(bench(&["generate", "--local", "2", "--out", out]).status.code(), Some(2));
    assert_eq!(bench(&["benchmark", "missing.json", "--estimators", "mc:1", "--out", out]).status.code(), Some(2));
    assert_eq!(bench(&["solve-ref", "does-not-exist.json"]).status.code(), Some(4));
}

#[test]
fn margin_reference_is_optimal_and_large_margin_is_infeasible() {
    let dir = TempDir::new().unwrap();
    let (p, _) = generate(&dir, "p.json", "42");
    let o = bench(&["solve-ref", &p, "--statistic", "margin", "--kappa", "2", "--sigma", "0.01"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["status"], "optimal");
    assert!(v["kkt_residual"].as_f64().unwrap() <= 1e-8);

    let o = bench(&["solve-ref", &p, "--kappa", "1000", "--sigma", "0.01"]);
    assert_eq!(o.status.code(), Some(3));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["status"], "infeasible");
}

#[test]
fn deterministic_statistic_ignores_the_noise() {
    let dir = TempDir::new().unwrap();
    let (p, _) = generate(&dir, "p.json", "3");
    let a = stdout(&bench(&["solve-ref", &p, "--statistic", "none"]));
    let b = stdout(&bench(&["solve-ref", &p, "--statistic", "none", "--sigma", "0.3"]));
    assert_eq!(a, b);
}

#[test]
fn tune_rewrites_the_threshold() {
    let dir = TempDir::new().unwrap();
    let (p, d0) = generate(&dir, "p.json", "5");
    let t0 = json_file(Path::new(&p))["t"].as_f64().unwrap();
    let o = bench(&["tune", &p, "--alpha-t", "0.9"]);
    assert!(o.status.success());
    let t1 = json_file(Path::new(&p))["t"].as_f64().unwrap();
    assert!(t1 <= t0, "{t1} > {t0}");
    assert!(!stdout(&o).contains(&d0));
}

#[test]
fn export_qp_writes_every_field() {
    let dir = TempDir::new().unwrap();
    let (p, _) = generate(&dir, "p.json", "7");
    let out = dir.path().join("qp.json");
    assert!(bench(&["export-qp", &p, "--sigma", "0.01", "--out", out.to_str().unwrap()]).status.success());
    let v = json_file(&out);
    for key in ["Q", "c", "d0", "A", "b", "lower", "upper"] {
        assert!(!v[key].is_null(), "{key}");
    }
    assert_eq!(v["Q"].as_array().unwrap().len(), 5);
    assert_eq!(v["A"].as_array().unwrap().len(), 6);
}

#[test]
fn solve_mdf_reports_counts_and_time() {
    let dir = TempDir::new().unwrap();
    let (p, _) = generate(&dir, "p.json", "9");
    let o = bench(&["solve-mdf", &p, "--estimator", "taylor", "--sigma", "0.01"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["n_discipline_evals"].as_u64().unwrap() > 0);
    assert!(v["n_optimizer_iters"].as_u64().unwrap() <= 100);
    assert!(v["wall_time_s"].as_f64().unwrap() >= 0.0);
    assert_eq!(v["converged"], true);
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(
        r.headers().unwrap().iter().collect::<Vec<_>>(),
        ["estimator", "rep", "dx_pct", "df_pct", "dg_pct", "n_evals", "wall_s"]
    );
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn benchmark_json_and_csv_agree_and_reproduce() {
    let dir = TempDir::new().unwrap();
    let (p, digest) = generate(&dir, "p.json", "42");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = bench(&[
            "benchmark",
            &p,
            "--estimators",
            "mc:20,taylor,exact",
            "--repetitions",
            "2",
            "--sigma",
            "0.01",
            "--max-iter",
            "40",
            "--seed",
            "100",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (json_file(&out), csv_rows(&out.with_extension("csv")))
    };
    let (report, rows) = run("r1.json");
    assert_eq!(report["problem_digest"], digest.as_str());
    assert_eq!(report["seeds"]["repetitions"], serde_json::json!([100, 101]));

    let runs = report["runs"].as_array().unwrap();
    assert_eq!(runs.len(), rows.len());
    assert_eq!(rows.len(), 4);
    for (run, row) in runs.iter().zip(&rows) {
        assert_eq!(run["estimator"].as_str().unwrap(), row[0]);
        assert_eq!(run["rep"].as_u64().unwrap().to_string(), row[1]);
        for (key, cell) in ["dx_pct", "df_pct", "dg_pct"].iter().zip(&row[2..5]) {
            assert_eq!(run[*key].as_f64().unwrap().to_bits(), cell.parse::<f64>().unwrap().to_bits());
        }
        assert_eq!(run["n_evals"].as_u64().unwrap().to_string(), row[5]);
        assert_eq!(run["wall_s"].as_f64().unwrap().to_bits(), row[6].parse::<f64>().unwrap().to_bits());
    }

    let rows_of =
        |r: &Value, name: &str| r["rows"].as_array().unwrap().iter().find(|x| x["estimator"] == name).cloned();
    let mc = rows_of(&report, "mc:20").unwrap();
    assert!(mc["std_dx"].as_f64().is_some());
    let tp = rows_of(&report, "taylor").unwrap();
    assert!(tp.get("std_dx").is_none());
    let exact = rows_of(&report, "exact").unwrap();
    for key in ["mean_dx", "mean_df", "mean_dg"] {
        assert!(exact[key].as_f64().unwrap() <= 0.1, "{key}");
    }

    // Everything except the timings is reproducible from the recorded seeds.
    let (again, _) = run("r2.json");
    let strip = |mut v: Value| {
        for r in v["runs"].as_array_mut().unwrap() {
            r["wall_s"] = Value::Null;
        }
        for r in v["rows"].as_array_mut().unwrap() {
            r["mean_wall_s"] = Value::Null;
        }
        v
    };
    assert_eq!(strip(report), strip(again));
}

#[test]
fn single_repetition_has_no_std_columns() {
    let dir = TempDir::new().unwrap();
    let (p, _) = generate(&dir, "p.json", "1");
    let out = dir.path().join("r.json");
    let o = bench(&[
        "benchmark",
        &p,
        "--estimators",
        "mc:10",
        "--repetitions",
        "1",
        "--sigma",
        "0.01",
        "--max-iter",
        "15",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(!text.contains("std_d"), "{text}");
}

#[test]
fn benchmark_on_infeasible_reference_exits_with_three() {
    let dir = TempDir::new().unwrap();
    let (p, _) = generate(&dir, "p.json", "2");
    let out = dir.path().join("r.json");
    let o = bench(&["benchmark", &p, "--kappa", "1000", "--sigma", "0.01", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}
