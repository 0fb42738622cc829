//! End-to-end runs of the `lfdr` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lfdr_core::simulate::{generate, SimModel};

fn lfdr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lfdr")).args(args).env("RUST_LOG", "error").output().unwrap()
}

fn write_sample(dir: &Path, seed: u64) -> PathBuf {
    let z = generate(&SimModel::exact_null(), seed).unwrap();
    let text: String = z.values().iter().map(|v| format!("{v}\n")).collect();
    let p = dir.join("z.txt");
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn analyze_writes_consistent_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_sample(tmp.path(), 3);
    let out = tmp.path().join("out");
    let o = lfdr(&["analyze", "--input", s(&input), "--out", s(&out), "--project", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let cases = fs::read_to_string(out.join("cases.csv")).unwrap();
    let rows: Vec<&str> = cases.lines().skip(1).collect();
    assert_eq!(rows.len(), 1500);
    let (mut left, mut right) = (0, 0);
    for r in &rows {
        let f: Vec<&str> = r.split(',').collect();
        if f[6] == "true" {
            if f[1].parse::<f64>().unwrap() < 0.0 {
                left += 1;
            } else {
                right += 1;
            }
        }
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_cases"], 1500);
    assert_eq!(summary["flagged_left"], left);
    assert_eq!(summary["flagged_right"], right);
    assert!(right > 0);
    assert!(fs::read_to_string(out.join("plot.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn analyze_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_sample(tmp.path(), 4);
    // The summary records the output directory, so both runs share one.
    let out = tmp.path().join("out");
    let names = ["cases.csv", "summary.json", "plot.svg"];
    let mut runs = Vec::new();
    for _ in 0..2 {
        assert!(lfdr(&["analyze", "--input", s(&input), "--out", s(&out)]).status.success());
        runs.push(names.map(|n| fs::read(out.join(n)).unwrap()));
    }
    for (i, name) in names.iter().enumerate() {
        assert_eq!(runs[0][i], runs[1][i], "{name}");
    }
}

#[test]
fn empty_input_is_a_usage_error_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("empty.txt");
    fs::write(&input, "").unwrap();
    let out = tmp.path().join("out");
    let o = lfdr(&["analyze", "--input", s(&input), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn t_statistics_need_degrees_of_freedom() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_sample(tmp.path(), 5);
    let o = lfdr(&["analyze", "--input", s(&input), "--stat", "t", "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn too_many_bad_rows_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let z = generate(&SimModel::exact_null(), 6).unwrap();
    let mut text = String::new();
    for (i, v) in z.values().iter().enumerate() {
        text.push_str(&format!("{v}\n"));
        if i % 20 == 0 {
            text.push_str("n/a\n");
        }
    }
    let input = tmp.path().join("z.txt");
    fs::write(&input, text).unwrap();
    let o = lfdr(&["analyze", "--input", s(&input), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_is_reproducible() {
    let a = lfdr(&["simulate", "--table", "3", "--reps", "20", "--seed", "8"]);
    let b = lfdr(&["simulate", "--table", "3", "--reps", "20", "--seed", "8"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn simulate_table_one_layout() {
    let o = lfdr(&["simulate", "--table", "1", "--reps", "20"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0].split(',').count(), 5);
    let names: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["Mean", "Stdev", "Coefvar"]);
}

#[test]
fn unit_projection_matches_the_analysis() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_sample(tmp.path(), 7);
    let out = tmp.path().join("out");
    assert!(lfdr(&["analyze", "--input", s(&input), "--out", s(&out)]).status.success());
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let base = summary["efdr1"].as_f64().unwrap();

    let o = lfdr(&["project", "--input", s(&input), "--c", "1,3"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let vals: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!((vals[0] - base).abs() < 1e-5 * base, "{} vs {base}", vals[0]);
    assert!(vals[1] < vals[0]);
}

#[test]
fn bad_arguments_exit_one() {
    assert_eq!(lfdr(&["simulate", "--table", "2"]).status.code(), Some(1));
    assert_eq!(lfdr(&["--help"]).status.code(), Some(0));
}
