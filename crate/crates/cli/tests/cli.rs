use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dflab::data::{gaussian_design, simulate_gaussian_response};
use nalgebra::DVector;
use tempfile::TempDir;

fn dflab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dflab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Header line, column names, and rows split on commas.
fn parse_csv(text: &str) -> (String, Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let cols = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, cols, rows)
}

fn col(cols: &[String], name: &str) -> usize {
    cols.iter()
        .position(|c| c == name)
        .unwrap_or_else(|| panic!("no column {name} in {cols:?}"))
}

fn num(s: &str) -> f64 {
    s.parse().unwrap_or_else(|_| panic!("not a number: {s:?}"))
}

fn gaussian_csv(dir: &Path, n: usize, p: usize, seed: u64) -> PathBuf {
    let x = gaussian_design(n, p, seed);
    let y = simulate_gaussian_response(&DVector::zeros(n), seed + 1).unwrap();
    let mut text: String = (1..=p).map(|j| format!("x{j},")).collect::<String>() + "y\n";
    for i in 0..n {
        for j in 0..p {
            text.push_str(&format!("{},", x[(i, j)]));
        }
        text.push_str(&format!("{}\n", y[i]));
    }
    let path = dir.join(format!("data_{n}_{p}_{seed}.csv"));
    std::fs::write(&path, text).unwrap();
    path
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_str(&stdout(out)).unwrap()
}

#[test]
fn splines_table_rows_and_zero_se_with_one_rep() {
    let out = dflab(&[
        "splines-table",
        "--reps",
        "20",
        "--lambda-grid",
        "0.01",
        "--j-grid",
        "10",
    ]);
    let (header, cols, rows) = parse_csv(&stdout(&out));
    assert!(header.starts_with("# dflab splines-table seed=1 format=csv n=100 m=100 reps=20"));
    let cubic = rows.iter().find(|r| r[col(&cols, "method")] == "cubic").unwrap();
    assert_eq!(num(&cubic[col(&cols, "parameter")]), 10.0);
    assert!((num(&cubic[col(&cols, "theoretical")]) - 10.0).abs() < 1e-8);
    assert!((num(&cubic[col(&cols, "empirical")]) - 10.0).abs() < 0.5);
    // no theoretical value for the penalized monotone fit
    let mono = rows
        .iter()
        .find(|r| r[col(&cols, "method")] == "monotone_smoothing")
        .unwrap();
    assert_eq!(mono[col(&cols, "theoretical")], "");

    let out = dflab(&[
        "splines-table",
        "--reps",
        "1",
        "--m",
        "20",
        "--lambda-grid",
        "0.1",
        "--j-grid",
        "5",
    ]);
    let (_, cols, rows) = parse_csv(&stdout(&out));
    assert!(rows.iter().all(|r| num(&r[col(&cols, "se")]) == 0.0));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let args = [
        "splines-table",
        "--reps",
        "3",
        "--m",
        "20",
        "--seed",
        "9",
        "--threads",
        "2",
    ];
    assert_eq!(stdout(&dflab(&args)), stdout(&dflab(&args)));
    let args = ["lasso-path", "--n", "40", "--p", "6", "--grid-size", "4", "--seed", "3"];
    assert_eq!(stdout(&dflab(&args)), stdout(&dflab(&args)));
    let args = ["tree-table", "--reps", "2", "--m", "10", "--depths", "0,2"];
    assert_eq!(stdout(&dflab(&args)), stdout(&dflab(&args)));
}

#[test]
fn tree_table_default_cells() {
    let (_, cols, rows) = parse_csv(&stdout(&dflab(&["tree-table"])));
    assert_eq!(rows.len(), 15);
    let cell = |depth: &str, p: &str| {
        rows.iter()
            .find(|r| r[col(&cols, "depth")] == depth && r[col(&cols, "p")] == p)
            .unwrap()
    };
    let r = cell("1", "5");
    assert_eq!(num(&r[col(&cols, "leaves")]), 2.0);
    assert!((num(&r[col(&cols, "df_hat")]) - 8.71).abs() < 0.5);
    assert!((num(&r[col(&cols, "msdf")]) - 6.71).abs() < 0.5);
    for p in ["1", "5", "10"] {
        let r = cell("0", p);
        assert!(num(&r[col(&cols, "msdf")]).abs() < 3.0 * num(&r[col(&cols, "msdf_se")]) + 0.05);
    }
}

#[test]
fn lasso_path_tracks_active_count() {
    let (_, cols, rows) = parse_csv(&stdout(&dflab(&["lasso-path"])));
    assert_eq!(rows.len(), 20);
    let gap: f64 = rows
        .iter()
        .map(|r| (num(&r[col(&cols, "df_theorem")]) - num(&r[col(&cols, "n_active")])).abs())
        .sum::<f64>()
        / rows.len() as f64;
    assert!(gap < 0.5, "mean gap {gap}");
    // grid is increasing, so the last row is at the largest penalty
    assert_eq!(rows.last().unwrap()[col(&cols, "n_active")], "0");
}

#[test]
fn config_file_precedence_and_rerun_from_header() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# tree settings\nreps = 2\nm = 10\ndepths = 0,1\nseed = 5\n").unwrap();
    let cfg_s = cfg.to_str().unwrap();

    let out = stdout(&dflab(&["tree-table", "--config", cfg_s, "--seed", "6"]));
    let header = out.lines().next().unwrap().to_string();
    assert!(header.contains("seed=6"), "{header}");
    assert!(header.contains("reps=2") && header.contains("m=10") && header.contains("depths=0,1"));
    assert!(header.contains("n=100"));

    // the header is a complete config: rerunning from it reproduces the file
    let rerun = dir.path().join("rerun.cfg");
    let body: String = header
        .trim_start_matches("# dflab tree-table")
        .split_whitespace()
        .map(|kv| format!("{kv}\n"))
        .collect();
    std::fs::write(&rerun, body).unwrap();
    let again = stdout(&dflab(&["tree-table", "--config", rerun.to_str().unwrap()]));
    assert_eq!(out, again);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "bogus = 1\n").unwrap();
    assert_eq!(
        dflab(&["tree-table", "--config", bad.to_str().unwrap()]).status.code(),
        Some(2)
    );
    assert_eq!(dflab(&["tree-table", "--m", "1"]).status.code(), Some(2));
    assert_eq!(dflab(&["tree-table", "--depths", "1,x"]).status.code(), Some(2));
    assert_eq!(dflab(&["df"]).status.code(), Some(2));

    // more predictors than rows: least squares is singular
    let wide = gaussian_csv(dir.path(), 4, 6, 1);
    assert_eq!(
        dflab(&["df", "--data", wide.to_str().unwrap(), "--procedure", "ols"])
            .status
            .code(),
        Some(3)
    );

    assert_eq!(dflab(&["df", "--data", "/nonexistent/data.csv"]).status.code(), Some(4));
    let args = [
        "tree-table",
        "--reps",
        "1",
        "--m",
        "2",
        "--depths",
        "0",
        "--out",
        "/nonexistent/dir/t.csv",
    ];
    assert_eq!(dflab(&args).status.code(), Some(4));
}

#[test]
fn out_flag_writes_file() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("t.json");
    let out = dflab(&[
        "tree-table",
        "--reps",
        "1",
        "--m",
        "5",
        "--depths",
        "1",
        "--p-values",
        "2",
        "--format",
        "json",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(stdout(&out).is_empty());
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(doc["command"], "tree-table");
    assert_eq!(doc["rows"].as_array().unwrap().len(), 1);
}

#[test]
fn df_on_csv_data() {
    let dir = TempDir::new().unwrap();
    let data = gaussian_csv(dir.path(), 100, 5, 42);
    let d = data.to_str().unwrap();

    let ols = json(&dflab(&[
        "df",
        "--data",
        d,
        "--procedure",
        "ols",
        "--reps",
        "10",
        "--format",
        "json",
    ]));
    let (v, se) = (
        ols["record"]["df_hat"].as_f64().unwrap(),
        ols["record"]["se"].as_f64().unwrap(),
    );
    assert!((v - 5.0).abs() < 4.0 * se + 0.05, "{v} {se}");

    let ridge = json(&dflab(&[
        "df",
        "--data",
        d,
        "--procedure",
        "ridge",
        "--lambda",
        "0",
        "--reps",
        "10",
        "--format",
        "json",
    ]));
    let rv = ridge["record"]["df_hat"].as_f64().unwrap();
    assert!((rv - v).abs() <= se + 1e-9, "{rv} vs {v}");

    let tree = json(&dflab(&[
        "df",
        "--data",
        d,
        "--procedure",
        "tree",
        "--depth",
        "2",
        "--format",
        "json",
    ]));
    let tv = tree["record"]["df_hat"].as_f64().unwrap();
    assert!((15.0..=22.0).contains(&tv), "tree df {tv}");
}

#[test]
fn mars_subcommands() {
    let out = dflab(&[
        "mars", "correct", "--p", "2", "--nk", "5", "--m", "20", "--reps", "2", "--format", "json",
    ]);
    let doc = json(&out);
    assert!(doc["c_corrected"].as_f64().unwrap() >= 0.0);
    assert!(doc["r"].as_u64().unwrap() >= 2);

    let out = dflab(&["mars", "check", "--nk-grid", "3,5,7", "--m", "20", "--reps", "2"]);
    let (header, cols, rows) = parse_csv(&stdout(&out));
    assert!(header.starts_with("# dflab mars check"));
    assert_eq!(rows.len(), 3);
    for name in ["nk", "nominal_df", "empirical_df", "c"] {
        col(&cols, name);
    }
    let diag = String::from_utf8_lossy(&out.stderr);
    assert!(diag.contains("slope within 0.15 of 1"), "{diag}");

    let out = dflab(&[
        "mars",
        "r2study",
        "--p-grid",
        "2",
        "--reps",
        "1",
        "--n",
        "60",
        "--n-test",
        "100",
        "--nk",
        "5",
        "--correction-m",
        "10",
        "--correction-reps",
        "1",
        "--c-grid",
        "2,3",
        "--folds",
        "3",
    ]);
    let (_, cols, rows) = parse_csv(&stdout(&out));
    assert_eq!(rows.len(), 3);
    let variants: Vec<&str> = rows.iter().map(|r| r[col(&cols, "variant")].as_str()).collect();
    assert_eq!(variants, ["default", "corrected", "cv"]);

    let dir = TempDir::new().unwrap();
    let data = gaussian_csv(dir.path(), 80, 3, 7);
    let out = dflab(&[
        "mars",
        "fit-csv",
        "--data",
        data.to_str().unwrap(),
        "--nk",
        "5",
        "--penalty",
        "corrected",
        "--correction-m",
        "10",
        "--correction-reps",
        "1",
        "--format",
        "json",
    ]);
    let doc = json(&out);
    for key in ["terms", "coefficients", "r", "c", "gcv"] {
        assert!(!doc["model"][key].is_null(), "missing {key}");
    }
    for penalty in ["default", "cv", "2.5"] {
        let doc = json(&dflab(&[
            "mars",
            "fit-csv",
            "--data",
            data.to_str().unwrap(),
            "--nk",
            "5",
            "--penalty",
            penalty,
            "--format",
            "json",
        ]));
        let c = doc["c"].as_f64().unwrap();
        match penalty {
            "default" => assert_eq!(c, 2.0),
            "2.5" => assert_eq!(c, 2.5),
            _ => assert!(c >= 0.0),
        }
        assert_eq!(
            doc["model"]["terms"].as_array().unwrap().len(),
            doc["model"]["coefficients"].as_array().unwrap().len()
        );
    }
    let csv = stdout(&dflab(&[
        "mars",
        "fit-csv",
        "--data",
        data.to_str().unwrap(),
        "--nk",
        "5",
    ]));
    let (_, cols, rows) = parse_csv(&csv);
    assert_eq!(cols, ["term", "coefficient"]);
    assert_eq!(rows[0][0], "1");
}
