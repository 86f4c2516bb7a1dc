use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use suffx_cli::commands::{InstanceReport, SWEEP_HEADER};
use suffx_core::synth::{adult_like_suite, constant_forest, single_split_forest, uniform_circuit};
use suffx_core::{sigmoid, Circuit, Ensemble};
use tempfile::TempDir;

struct Files {
    _dir: TempDir,
    circuit: PathBuf,
    ensemble: PathBuf,
    instances: PathBuf,
}

fn write_files(c: &Circuit, e: &Ensemble, rows: &[Vec<bool>]) -> Files {
    let dir = tempfile::tempdir().unwrap();
    let circuit = dir.path().join("circuit.json");
    let ensemble = dir.path().join("ensemble.json");
    let instances = dir.path().join("instances.csv");
    fs::write(&circuit, c.to_json()).unwrap();
    fs::write(&ensemble, e.to_json()).unwrap();
    let n = c.num_features();
    let mut csv: Vec<String> = (0..n).map(|i| format!("f{i}")).collect();
    csv.push("label".into());
    let mut text = csv.join(",") + "\n";
    for (i, x) in rows.iter().enumerate() {
        let row: Vec<&str> = x.iter().map(|&b| if b { "1" } else { "0" }).collect();
        text += &format!("{},{}\n", row.join(","), if i % 2 == 0 { "yes" } else { "no" });
    }
    fs::write(&instances, text).unwrap();
    Files {
        _dir: dir,
        circuit,
        ensemble,
        instances,
    }
}

fn suffx(cmd: &str, f: &Files, extra: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_suffx"))
        .arg(cmd)
        .arg("--circuit")
        .arg(&f.circuit)
        .arg("--ensemble")
        .arg(&f.ensemble)
        .arg("--instances")
        .arg(&f.instances)
        .args(extra)
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn reports(stdout: &str) -> Vec<InstanceReport> {
    stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn suite_files(instances: usize) -> (Files, Ensemble, Vec<Vec<bool>>) {
    let s = adult_like_suite(5, instances);
    let f = write_files(&s.circuit, &s.ensemble, &s.instances);
    (f, s.ensemble, s.instances)
}

#[test]
fn explain_constant_forest() {
    let c = uniform_circuit(5);
    let e = constant_forest(5, &[0.5, 0.25]);
    let f = write_files(&c, &e, &[vec![true, false, true, true, false]]);
    let (code, out, _) = suffx("explain", &f, &["--k", "3", "--samples", "500"]);
    assert_eq!(code, 0);
    let r = &reports(&out)[0];
    assert_eq!(r.label.as_deref(), Some("yes"));
    assert_eq!(r.levels.len(), 3);
    for l in &r.levels {
        assert_eq!(l.ep_logodds, 0.75);
        assert_eq!(l.sdp, Some(1.0));
        assert!((l.log_marginal - (0.5f64).ln() * l.size as f64).abs() < 1e-12);
    }
    assert_eq!(r.mlse.size, 0);
}

#[test]
fn explain_single_decisive_feature() {
    let c = uniform_circuit(4);
    let e = single_split_forest(4, 1, -2.0, 3.0);
    let x = vec![false, true, false, true];
    let f = write_files(&c, &e, std::slice::from_ref(&x));
    let (code, out, _) = suffx("explain", &f, &["--k", "2", "--samples", "500", "--ep-min", "3"]);
    assert_eq!(code, 0);
    let r = &reports(&out)[0];
    assert_eq!(r.levels[0].ep_logodds, e.log_odds_full(&x));
    assert_eq!(r.levels[0].features, vec!["f1"]);
    assert_eq!(r.mlse.indices, vec![1]);
    assert_eq!(r.ep_min.as_ref().unwrap().indices, vec![1]);
    assert_eq!(r.levels[0].bound_logodds, Some(1.0));
}

#[test]
fn explain_json_roundtrips_and_tables_render() {
    let (f, _, rows) = suite_files(4);
    let (code, out, _) = suffx("explain", &f, &["--k", "3", "--samples", "300", "--threads", "2"]);
    assert_eq!(code, 0);
    let rs = reports(&out);
    assert_eq!(rs.len(), rows.len());
    for (i, r) in rs.iter().enumerate() {
        assert_eq!(r.instance, i);
        assert!(r.calls.ep_calls <= r.calls.budget + 1);
        for l in r.levels.iter().chain([&r.mlse]) {
            assert!(l.log_marginal <= 0.0 && l.ep_logodds.is_finite());
        }
        let again: InstanceReport = serde_json::from_str(&serde_json::to_string(r).unwrap()).unwrap();
        assert_eq!(&again, r);
    }
    let (code, table, _) = suffx("explain", &f, &["--k", "2", "--samples", "300", "--format", "table", "--timing"]);
    assert_eq!(code, 0);
    assert!(table.contains("sigmoid(EP_O)"));
    assert!(table.contains("cumulative ms per level"));
}

#[test]
fn sweep_table() {
    let (f, _, _) = suite_files(6);
    let (code, out, _) = suffx("sweep", &f, &["--k", "11", "--samples", "2000"]);
    assert_eq!(code, 0);
    let mut lines = out.lines();
    assert_eq!(lines.next().unwrap(), SWEEP_HEADER);
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 11);
    for r in &rows {
        assert_eq!(r.len(), 7);
        // the bound is valid per instance; allow for sampling noise in the mean
        assert!(r[3] <= r[1] + 0.02, "{r:?}");
    }
    assert_eq!(rows[10][1], 1.0);
    assert_eq!(rows[10][3], 1.0);
}

#[test]
fn tradeoff_points() {
    let (f, e, rows) = suite_files(5);
    let (code, out, _) = suffx("tradeoff", &f, &["--k", "11"]);
    assert_eq!(code, 0);
    let mut lines = out.lines();
    assert_eq!(lines.next().unwrap(), "instance,class,size,approx_ep,log_marginal");
    let points: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(points.len(), 5 * 11);
    let first_negative = points.iter().position(|p| p[1] == "negative").unwrap_or(points.len());
    assert!(points[first_negative..].iter().all(|p| p[1] == "negative"));
    for p in points.iter().filter(|p| p[2] == "11") {
        let i: usize = p[0].parse().unwrap();
        let approx: f64 = p[3].parse().unwrap();
        assert!((approx - sigmoid(e.log_odds_full(&rows[i]))).abs() < 1e-12);
    }
}

#[test]
fn logical_fixtures() {
    let c = uniform_circuit(4);
    let x = vec![true, true, false, false];
    let f = write_files(&c, &constant_forest(4, &[1.0]), std::slice::from_ref(&x));
    let (code, out, _) = suffx("logical", &f, &[]);
    assert_eq!(code, 0);
    let rec: serde_json::Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
    assert_eq!(rec["worst_case_size"], 0);
    assert_eq!(rec["distribution_aware_size"], 0);

    let f = write_files(&c, &single_split_forest(4, 2, 1.0, -1.0), &[x]);
    let (code, out, _) = suffx("logical", &f, &["--mode", "worst"]);
    assert_eq!(code, 0);
    let rec: serde_json::Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
    assert_eq!(rec["worst_case_size"], 1);
    assert_eq!(rec["mlse_size"], 1);
    assert!(rec["distribution_aware_size"].is_null());
    let summary: serde_json::Value = serde_json::from_str(out.lines().last().unwrap()).unwrap();
    assert_eq!(summary["summary"]["instances"], 1);
}

#[test]
fn validate_and_mutations() {
    let (f, _, _) = suite_files(10);
    let (code, out, _) = suffx("validate", &f, &["--samples", "4000"]);
    assert_eq!(code, 0, "{out}");
    assert_eq!(out.matches("PASS").count(), 5);

    let (code, out, _) = suffx("validate", &f, &["--samples", "4000", "--inject", "weight"]);
    assert_eq!(code, 3);
    assert!(out.lines().any(|l| l.starts_with("marginal") && l.ends_with("FAIL")));

    let (code, out, _) = suffx("validate", &f, &["--samples", "4000", "--inject", "leaf"]);
    assert_eq!(code, 3);
    assert!(out.lines().any(|l| l.starts_with("expected_logodds") && l.ends_with("FAIL")));
    assert!(out.lines().any(|l| l.starts_with("marginal") && l.ends_with("PASS")));
}

#[test]
fn exit_codes() {
    let (f, _, _) = suite_files(2);
    assert_eq!(suffx("explain", &f, &["--k", "0"]).0, 1);
    assert_eq!(suffx("explain", &f, &["--k", "12"]).0, 1);
    assert_eq!(suffx("explain", &f, &["--beam", "nope"]).0, 1);
    fs::write(&f.instances, "a,b\n0,1\n").unwrap();
    assert_eq!(suffx("explain", &f, &[]).0, 2);
    fs::write(&f.circuit, "{ not json").unwrap();
    let (code, _, err) = suffx("explain", &f, &[]);
    assert_eq!(code, 2);
    assert!(err.contains("circuit.json"));

    let wide = uniform_circuit(15);
    let f = write_files(&wide, &constant_forest(15, &[1.0]), &[vec![true; 15]]);
    assert_eq!(suffx("logical", &f, &[]).0, 4);
}

#[test]
fn sample_and_convert() {
    let dir = tempfile::tempdir().unwrap();
    let c = uniform_circuit(3);
    let cp = dir.path().join("c.json");
    fs::write(&cp, c.to_json()).unwrap();
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_suffx")).args(args).output().unwrap();
        (out.status.code().unwrap(), String::from_utf8(out.stdout).unwrap())
    };
    let cps = cp.to_str().unwrap();
    let (code, out) = run(&["sample", "--circuit", cps, "--samples", "50", "--seed", "3", "--given", "x1=1"]);
    assert_eq!(code, 0);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "x0,x1,x2");
    assert_eq!(lines.len(), 51);
    assert!(lines[1..].iter().all(|l| l.split(',').nth(1) == Some("1")));
    assert_eq!(run(&["sample", "--circuit", cps, "--samples", "50", "--seed", "3", "--given", "x1=1"]).1, out);

    let dump = dir.path().join("dump.txt");
    fs::write(&dump, "booster[0]:\n0:[f0<0.5] yes=1,no=2,missing=1\n\t1:leaf=-0.5\n\t2:leaf=0.5\n").unwrap();
    let ep = dir.path().join("e.json");
    let (code, _) = run(&[
        "convert", "--ensemble", dump.to_str().unwrap(), "--features", "3", "--out", ep.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let e = Ensemble::from_json(&fs::read_to_string(&ep).unwrap()).unwrap();
    assert_eq!(e.num_features(), 3);
    assert_eq!(e.log_odds_full(&[true, false, false]), 0.5);
}

#[test]
fn input_file_missing() {
    let f = Files {
        _dir: tempfile::tempdir().unwrap(),
        circuit: Path::new("/nonexistent/c.json").into(),
        ensemble: Path::new("/nonexistent/e.json").into(),
        instances: Path::new("/nonexistent/x.csv").into(),
    };
    assert_eq!(suffx("explain", &f, &[]).0, 2);
}
