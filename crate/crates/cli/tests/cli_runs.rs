use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use clap::Parser;
use fqr_cli::{run_analyze, run_simulate, AnalyzeArgs, Cli, SimulateArgs};
use fqr_core::simlab::SimScenario;
use serde_json::Value;

struct Inputs {
    responses: PathBuf,
    design: PathBuf,
    grid: PathBuf,
}

fn toy_inputs(dir: &Path, n: usize, t_len: usize, seed: u64) -> Inputs {
    let ds = SimScenario::continuous()
        .with_n(n)
        .with_t_len(t_len)
        .generate(seed)
        .unwrap();
    let inputs = Inputs {
        responses: dir.join("y.csv"),
        design: dir.join("x.csv"),
        grid: dir.join("t.csv"),
    };
    ds.write_csv(&inputs.responses, &inputs.design, &inputs.grid).unwrap();
    inputs
}

fn analyze_args(inputs: &Inputs, out: &Path, extra: &[&str]) -> AnalyzeArgs {
    let mut argv: Vec<String> = vec![
        "fqr".into(),
        "analyze".into(),
        "--responses".into(),
        inputs.responses.display().to_string(),
        "--design".into(),
        inputs.design.display().to_string(),
        "--grid".into(),
        inputs.grid.display().to_string(),
        "--out".into(),
        out.display().to_string(),
    ];
    argv.extend(extra.iter().map(|s| s.to_string()));
    match Cli::try_parse_from(argv).unwrap().command {
        fqr_cli::Command::Analyze(a) => a,
        _ => unreachable!(),
    }
}

fn simulate_args(out: &Path, extra: &[&str]) -> SimulateArgs {
    let mut argv: Vec<String> = vec![
        "fqr".into(),
        "simulate".into(),
        "--out".into(),
        out.display().to_string(),
    ];
    argv.extend(extra.iter().map(|s| s.to_string()));
    match Cli::try_parse_from(argv).unwrap().command {
        fqr_cli::Command::Simulate(a) => a,
        _ => unreachable!(),
    }
}

fn manifest(dir: &Path) -> Value {
    let text = fs::read_to_string(dir.join("manifest.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn without_timestamp(dir: &Path) -> String {
    fs::read_to_string(dir.join("manifest.json"))
        .unwrap()
        .lines()
        .filter(|l| !l.trim_start().starts_with("\"generated_at\""))
        .collect::<Vec<_>>()
        .join("\n")
}

fn assert_duality(v: &Value) {
    for block in v["results"].as_array().unwrap() {
        assert_eq!(block["duality_holds"], Value::Bool(true), "{block}");
    }
}

#[test]
fn toy_analysis_writes_manifest_and_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = toy_inputs(tmp.path(), 20, 8, 1);
    let out = tmp.path().join("out");
    let res = run_analyze(&analyze_args(&inputs, &out, &["--tau", "0.5", "--method", "li", "--seed", "42"])).unwrap();
    assert_eq!(res.results.len(), 1);
    let v = manifest(&out);
    assert_eq!(v["config"]["seed"], 42);
    let block = &v["results"][0];
    assert!(block["c_n_alpha"].as_f64().unwrap() > 1.9);
    let curve = out.join(block["curve_csv"].as_str().unwrap());
    let text = fs::read_to_string(&curve).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,estimate,pw_lo,pw_hi,joint_lo,joint_hi,simbas,flag"
    );
    assert_eq!(lines.count(), 8);
    assert!(out.join(block["estimate_csv"].as_str().unwrap()).exists());
    assert!(out.join("timings.json").exists());
    assert_duality(&v);
}

#[test]
fn repeated_analysis_is_byte_identical_apart_from_timestamp() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = toy_inputs(tmp.path(), 20, 8, 2);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_analyze(&analyze_args(&inputs, &a, &["--seed", "7"])).unwrap();
    run_analyze(&analyze_args(&inputs, &b, &["--seed", "7"])).unwrap();
    assert_eq!(without_timestamp(&a), without_timestamp(&b));
    let name = manifest(&a)["results"][0]["curve_csv"].as_str().unwrap().to_string();
    assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    assert_duality(&manifest(&a));
}

#[test]
fn three_levels_two_contrasts_give_six_blocks() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = toy_inputs(tmp.path(), 30, 8, 3);
    let out = tmp.path().join("out");
    let res = run_analyze(&analyze_args(
        &inputs,
        &out,
        &[
            "--tau", "0.1", "--tau", "0.5", "--tau", "0.9", "--contrast", "1", "--contrast", "0,1,-1",
            "--mc-draws", "2000",
        ],
    ))
    .unwrap();
    assert_eq!(res.results.len(), 6);
    let v = manifest(&out);
    let blocks = v["results"].as_array().unwrap();
    assert_eq!(blocks.len(), 6);
    let mut names: Vec<&str> = blocks.iter().map(|b| b["curve_csv"].as_str().unwrap()).collect();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), 6);
    // Weight vectors are normalized on construction.
    let w: Vec<f64> = serde_json::from_value(blocks[1]["contrast"].clone()).unwrap();
    assert!((w.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    assert_duality(&v);
}

#[test]
fn every_method_runs_and_satisfies_duality() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = toy_inputs(tmp.path(), 40, 16, 4);
    for method in ["li", "spline2", "presmooth-li", "bayes-gp"] {
        let out = tmp.path().join(method);
        let res = run_analyze(&analyze_args(
            &inputs,
            &out,
            &["--method", method, "--mc-draws", "2000", "--dump-sigma"],
        ))
        .unwrap();
        assert_eq!(res.results[0].method, method);
        assert!(out.join("sigma_tau0.5_c0.csv").exists());
        let v = manifest(&out);
        assert_duality(&v);
        if method == "bayes-gp" {
            assert!(v["results"][0]["gp"]["theta_l"].as_f64().unwrap() > 0.0);
        }
    }
}

#[test]
fn replay_from_manifest_reproduces_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = toy_inputs(tmp.path(), 20, 8, 5);
    let a = tmp.path().join("a");
    run_analyze(&analyze_args(&inputs, &a, &["--tau", "0.8", "--seed", "11", "--wavelet-smooth", "false"])).unwrap();
    let b = tmp.path().join("b");
    let replay = a.join("manifest.json").display().to_string();
    run_analyze(&analyze_args(&inputs, &b, &["--replay", &replay])).unwrap();
    assert_eq!(without_timestamp(&a), without_timestamp(&b));
    assert_eq!(
        fs::read(a.join("curve_tau0.8_c0.csv")).unwrap(),
        fs::read(b.join("curve_tau0.8_c0.csv")).unwrap()
    );
}

#[test]
fn sparse_grid_triggers_density_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = toy_inputs(tmp.path(), 100, 8, 6);
    let out = tmp.path().join("out");
    let res = run_analyze(&analyze_args(&inputs, &out, &["--mc-draws", "1000"])).unwrap();
    assert_eq!(res.warnings.len(), 1);
    assert_eq!(manifest(&out)["warnings"].as_array().unwrap().len(), 1);
}

#[test]
fn bad_input_exits_nonzero_with_stage_label() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = toy_inputs(tmp.path(), 20, 8, 7);
    let bin = env!("CARGO_BIN_EXE_fqr");
    let out = tmp.path().join("out");
    let common = |extra: &[&str]| {
        let mut c = Command::new(bin);
        c.args(["analyze", "--responses"])
            .arg(&inputs.responses)
            .arg("--design")
            .arg(&inputs.design)
            .arg("--grid")
            .arg(&inputs.grid)
            .arg("--out")
            .arg(&out)
            .args(extra);
        c.output().unwrap()
    };
    let ok = common(&["--mc-draws", "1000"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let bad = common(&["--contrast", "5"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("out of range"));
    let short = tmp.path().join("short.csv");
    fs::write(&short, "0.0\n1.0\n").unwrap();
    let mismatch = Command::new(bin)
        .args(["analyze", "--responses"])
        .arg(&inputs.responses)
        .arg("--design")
        .arg(&inputs.design)
        .arg("--grid")
        .arg(&short)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(!mismatch.status.success());
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("load stage"));
}

#[test]
fn simulate_two_replicates_reports_both_coefficients() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    run_simulate(&simulate_args(
        &out,
        &[
            "--scenario", "continuous", "--replicates", "2", "--method", "li", "--tau", "0.5", "--seed", "3",
            "--n", "100", "--t-len", "32", "--mc-draws", "1000",
        ],
    ))
    .unwrap();
    let mut rdr = csv::Reader::from_path(out.join("study_summary.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    for row in &rows {
        assert_eq!(&row[col("n")], "100");
        assert_eq!(&row[col("t_len")], "32");
        assert_eq!(&row[col("replicates")], "2");
    }
    let coefs: Vec<&str> = rows.iter().map(|r| &r[col("coefficient")]).collect();
    assert_eq!(coefs, ["1", "2"]);
    let v = manifest(&out);
    assert_eq!(v["config"]["n"], 100);
    assert_eq!(v["scenario"]["t_len"], 32);
    let raw = fs::read_to_string(out.join("study_replicates.csv")).unwrap();
    assert_eq!(raw.lines().count(), 1 + 2 * 2);
}

#[test]
fn unknown_scenario_lists_valid_names() {
    let tmp = tempfile::tempdir().unwrap();
    let err = run_simulate(&simulate_args(tmp.path(), &["--scenario", "wiggly", "--seed", "1"])).unwrap_err();
    let msg = format!("{err:#}");
    for name in ["continuous", "binary", "binary-gaussian-peaks"] {
        assert!(msg.contains(name), "{msg}");
    }
}

#[test]
fn simulate_requires_a_seed() {
    let argv = ["fqr", "simulate", "--replicates", "2"];
    assert!(Cli::try_parse_from(argv).is_err());
}
