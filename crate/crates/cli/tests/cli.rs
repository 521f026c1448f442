use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn grouploss(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grouploss"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Constant score 0.7; the feature splits the population into halves with
/// posteriors 0.6 and 0.8.
fn write_two_region_oracle(path: &Path, n: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::from("label,score,feature_0\n");
    for _ in 0..n {
        let x: f64 = rng.random();
        let q = if x < 0.5 { 0.6 } else { 0.8 };
        let y = u8::from(rng.random::<f64>() < q);
        text.push_str(&format!("{y},0.7,{x}\n"));
    }
    fs::write(path, text).unwrap();
}

fn schema() -> jsonschema::Validator {
    let text = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/report.schema.json")).unwrap();
    jsonschema::validator_for(&serde_json::from_str(&text).unwrap()).unwrap()
}

fn assert_valid(report: &Value) {
    let validator = schema();
    let errors: Vec<String> = validator.iter_errors(report).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "schema violations: {errors:#?}");
}

#[test]
fn stump_separates_two_region_oracle() {
    let dir = tempfile::tempdir().unwrap();
    write_two_region_oracle(&dir.path().join("in.csv"), 10_000, 1);
    let out = grouploss(dir.path(), &["estimate", "in.csv", "--partition", "stump", "--out", "r.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(dir.path().join("r.json"));
    assert!(report["GL_LB"].as_f64().unwrap() > 0.0);
    let bins: Vec<&Value> = report["diagram"].as_array().unwrap().iter().filter(|b| b["n_bin"].as_u64() > Some(0)).collect();
    assert_eq!(bins.len(), 1);
    let regions = bins[0]["regions"].as_array().unwrap();
    assert_eq!(regions.len(), 2);
    assert!(regions.iter().all(|r| r["grayed"] == false));
    assert_valid(&report);
}

#[test]
fn isotonic_lowers_binned_calibration_loss() {
    let dir = tempfile::tempdir().unwrap();
    let spec = r#"{"kind": "realistic", "d": 2, "omega": [1, 0], "omega_perp": [0, 1], "psi": "sigmoid",
                   "score_distortion": {"logit_scale": 2.5}}"#;
    fs::write(dir.path().join("spec.json"), spec).unwrap();
    for seed in ["1", "2", "3"] {
        let sim = grouploss(dir.path(), &["simulate", "--spec", "spec.json", "--n", "20000", "--seed", seed, "--out", "d.csv"]);
        assert!(sim.status.success());
        let cl = |recal: &str| {
            let out = grouploss(dir.path(), &["estimate", "d.csv", "--recalibrate", recal, "--seed", seed]);
            assert!(out.status.success());
            let report: Value = serde_json::from_slice(&out.stdout).unwrap();
            report["CL_binned"].as_f64().unwrap()
        };
        assert!(cl("isotonic") < cl("none"));
    }
}

#[test]
fn malformed_input_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.csv"), "label,score,feature_0\n0,0.2,1\n1,oops,2\n").unwrap();
    let out = grouploss(dir.path(), &["estimate", "bad.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let missing = grouploss(dir.path(), &["estimate", "absent.csv"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn every_bin_unestimable_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("label,score,feature_0\n");
    for s in ["0.05", "0.25", "0.45", "0.55", "0.75", "0.95"] {
        text.push_str(&format!("0,{s},0.1\n1,{s},0.7\n"));
    }
    fs::write(dir.path().join("tiny.csv"), text).unwrap();
    let out = grouploss(dir.path(), &["estimate", "tiny.csv", "--bins", "6", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(3));
    let report = read_json(dir.path().join("r.json"));
    assert_eq!(report["flags"]["all_unestimable"], true);
    assert_valid(&report);
}

#[test]
fn invalid_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("spec.json"), r#"{"kind": "realistic", "d": 2}"#).unwrap();
    assert_eq!(grouploss(dir.path(), &["simulate", "--spec", "spec.json"]).status.code(), Some(2));
    write_two_region_oracle(&dir.path().join("in.csv"), 200, 2);
    assert_eq!(grouploss(dir.path(), &["estimate", "in.csv", "--bins", "0"]).status.code(), Some(2));
    assert_eq!(grouploss(dir.path(), &["estimate", "in.csv", "--region-ratio", "1"]).status.code(), Some(2));
    let threads = Command::new(env!("CARGO_BIN_EXE_grouploss"))
        .current_dir(dir.path())
        .env("GROUPLOSS_THREADS", "zero")
        .args(["estimate", "in.csv"])
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(2));
}

#[test]
fn simulate_is_reproducible_and_reports_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    for out in ["a.csv", "b.csv"] {
        let run = grouploss(p, &["simulate", "--n", "5000", "--seed", "11", "--out", out]);
        assert!(run.status.success());
    }
    assert_eq!(fs::read(p.join("a.csv")).unwrap(), fs::read(p.join("b.csv")).unwrap());
    let header = fs::read_to_string(p.join("a.csv")).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "label,score,feature_0,feature_1,q_true");

    let run = grouploss(p, &["simulate", "--n", "100000", "--oracle-n", "200000", "--out", "d.csv", "--oracle-out", "o.json"]);
    assert!(run.status.success());
    let oracle = read_json(p.join("o.json"));
    assert!(oracle["oracle"]["GL_true"].as_f64().unwrap() > 0.0);
    assert!(oracle["oracle"]["GL_true_se"].as_f64().unwrap() > 0.0);
    assert!(oracle["oracle"]["CL_true"].as_f64().unwrap().abs() < 1e-12);

    fs::write(
        p.join("flat.json"),
        r#"{"kind": "realistic", "d": 2, "omega": [1, 0], "omega_perp": [0, 1], "psi": "zero"}"#,
    )
    .unwrap();
    let run = grouploss(p, &["simulate", "--spec", "flat.json", "--n", "100", "--out", "f.csv", "--oracle-out", "f.json"]);
    assert!(run.status.success());
    assert!(read_json(p.join("f.json"))["oracle"]["GL_true"].as_f64().unwrap() < 1e-7);
}

#[test]
fn sweep_marks_ratios_below_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = grouploss(
        dir.path(),
        &["sweep", "--axis", "region-ratio", "--values", "1,30", "--n", "10000", "--repeats", "2", "--oracle-n", "50000"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("region_ratio,GL_LB,GL_LB_sd"));
    assert!(lines[1].starts_with("1,,") && lines[1].ends_with(",true"));
    assert!(lines[2].starts_with("30,") && lines[2].ends_with(",false"));
}

#[test]
fn recalibrate_writes_monotone_scores() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(grouploss(p, &["simulate", "--n", "4000", "--seed", "5", "--out", "d.csv"]).status.success());
    let out = grouploss(p, &["recalibrate", "d.csv", "--out", "r.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let parse = |name: &str, col: usize| -> Vec<f64> {
        fs::read_to_string(p.join(name))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(col).unwrap().parse().unwrap())
            .collect()
    };
    let (before, after) = (parse("d.csv", 1), parse("r.csv", 1));
    assert_eq!(before.len(), after.len());
    let mut pairs: Vec<(f64, f64)> = before.into_iter().zip(after).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1));
    // the output is itself a valid input
    assert!(grouploss(p, &["estimate", "r.csv"]).status.success());
}

#[test]
fn reports_match_schema_across_options() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(grouploss(p, &["simulate", "--n", "6000", "--seed", "8", "--out", "d.csv"]).status.success());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut multi = String::from("label,score_0,score_1,score_2,feature_0\n");
    for _ in 0..3000 {
        let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..1.0)).collect();
        let t: f64 = raw.iter().sum();
        let s: Vec<f64> = raw.iter().map(|x| x / t).collect();
        let u: f64 = rng.random();
        let y = if u < s[0] { 0 } else if u < s[0] + s[1] { 1 } else { 2 };
        multi.push_str(&format!("{y},{},{},{},{}\n", s[0], s[1], s[2], rng.random::<f64>()));
    }
    fs::write(p.join("m.csv"), multi).unwrap();
    let runs: [&[&str]; 5] = [
        &["estimate", "d.csv"],
        &["estimate", "d.csv", "--rule", "logloss", "--partition", "kmeans", "--clusters", "3"],
        &["estimate", "d.csv", "--rule", "brier-vector", "--recalibrate", "isotonic", "--bandwidth", "0.5"],
        &["estimate", "m.csv", "--reduction", "top-label"],
        &["estimate", "m.csv", "--reduction", "classwise:2", "--partition", "stump"],
    ];
    for args in runs {
        let out = grouploss(p, args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert_valid(&serde_json::from_slice(&out.stdout).unwrap());
    }
}

#[test]
fn diagram_has_one_row_per_region() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(grouploss(p, &["simulate", "--n", "6000", "--seed", "4", "--out", "d.csv"]).status.success());
    let out = grouploss(p, &["estimate", "d.csv", "--out", "r.json", "--diagram-out", "g.csv"]);
    assert!(out.status.success());
    let report = read_json(p.join("r.json"));
    let regions: usize = report["diagram"].as_array().unwrap().iter().map(|b| b["regions"].as_array().unwrap().len()).sum();
    let diagram = fs::read_to_string(p.join("g.csv")).unwrap();
    assert_eq!(diagram.lines().count(), regions + 1);
    assert!(diagram.starts_with("bin_index,s_lo,s_hi,S_B,c_hat,n_bin,region_index,mu_hat,n_region,cp_lo,cp_hi,grayed\n"));
}
