use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dyncov::covariance::estimate_curve;
use dyncov::matrix::{project_psd, SymMatrix};
use dyncov::sim::{generate_replicate, ise, SimConfig, SpreadReading};
use dyncov::{linspace, Estimator, Kernel};
use nalgebra::{DMatrix, DVector};
use serde_json::Value;
use tempfile::TempDir;

fn dyncov(dir: &Path, args: &[&str]) -> Output {
    dyncov_env(dir, args, &[])
}

fn dyncov_env(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dyncov"));
    cmd.current_dir(dir).args(args).env_remove("DYNCOV_SEED").env_remove("DYNCOV_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn sim_config(dir: &Path, name: &str, body: &str) {
    fs::write(dir.join(name), body).unwrap();
}

fn matrices(v: &Value) -> Vec<SymMatrix> {
    v["matrices"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| {
            let rows: Vec<Vec<f64>> = serde_json::from_value(m.clone()).unwrap();
            SymMatrix::from_rows(&rows).unwrap()
        })
        .collect()
}

fn floats(v: &Value) -> Vec<f64> {
    serde_json::from_value(v.clone()).unwrap()
}

#[test]
fn tiny_simulation_has_expected_shape() {
    let dir = TempDir::new().unwrap();
    sim_config(dir.path(), "sim.json", r#"{"schema_version": 1, "p": 2, "n": 5, "seed": 3}"#);
    ok(&dyncov(dir.path(), &["simulate", "--config", "sim.json", "--out", "data.csv"]));
    let text = fs::read_to_string(dir.path().join("data.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "subject,time,y1,y2");
    assert_eq!(lines.len(), 6);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 4));
    let sidecar = json(dir.path().join("data.sim.json"));
    assert_eq!(sidecar["manifest"], "data.manifest.json");
    assert_eq!(sidecar["sim"]["p"], 2);
    let manifest = json(dir.path().join("data.manifest.json"));
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["config"]["seed"], 3);
}

#[test]
fn simulation_is_deterministic_and_seed_overrides_apply() {
    let dir = TempDir::new().unwrap();
    sim_config(dir.path(), "sim.json", r#"{"schema_version": 1, "p": 3, "n": 40, "seed": 3}"#);
    let run = |out: &str, env: &[(&str, &str)], extra: &[&str]| {
        let mut args = vec!["simulate", "--config", "sim.json", "--out", out];
        args.extend_from_slice(extra);
        ok(&dyncov_env(dir.path(), &args, env));
        fs::read(dir.path().join(out)).unwrap()
    };
    let a = run("a.csv", &[], &[]);
    let b = run("b.csv", &[], &[]);
    assert_eq!(a, b);
    let env = run("c.csv", &[("DYNCOV_SEED", "9")], &[]);
    assert_ne!(a, env);
    assert_eq!(json(dir.path().join("c.manifest.json"))["config"]["seed"], 9);
    let flag = run("d.csv", &[("DYNCOV_SEED", "9")], &["--seed", "3"]);
    assert_eq!(a, flag);
}

#[test]
fn repeated_design_rows_match_drawn_counts() {
    let dir = TempDir::new().unwrap();
    sim_config(
        dir.path(),
        "sim.json",
        r#"{"schema_version": 1, "p": 2, "n": 60, "seed": 5,
            "repeat_design": {"count_probs": [0.48, 0.28, 0.14, 0.1], "cross_corr": 0.2}}"#,
    );
    ok(&dyncov(dir.path(), &["simulate", "--config", "sim.json", "--out", "data.csv"]));
    let counts: Vec<usize> = serde_json::from_value(json(dir.path().join("data.sim.json"))["sim"]["counts"].clone()).unwrap();
    let text = fs::read_to_string(dir.path().join("data.csv")).unwrap();
    let mut per_subject: BTreeMap<usize, usize> = BTreeMap::new();
    for line in text.lines().skip(1) {
        *per_subject.entry(line.split(',').next().unwrap().parse().unwrap()).or_default() += 1;
    }
    assert_eq!(text.lines().count() - 1, counts.iter().sum::<usize>());
    assert_eq!(per_subject.len(), 60);
    for (subject, rows) in per_subject {
        assert_eq!(rows, counts[subject]);
    }
}

#[test]
fn constant_responses_give_zero_covariance() {
    let dir = TempDir::new().unwrap();
    let mut csv = String::from("subject,time,y1,y2\n");
    for i in 0..40 {
        csv.push_str(&format!("{i},{},2.5,-1\n", i as f64 / 39.0));
    }
    fs::write(dir.path().join("flat.csv"), csv).unwrap();
    ok(&dyncov(dir.path(), &["fit", "--data", "flat.csv", "--out", "fit.json", "--h-mean", "0.2", "--h-cov", "0.3"]));
    let fit = json(dir.path().join("fit.json"));
    for m in matrices(&fit) {
        assert!(m.to_rows().iter().flatten().all(|v| v.abs() < 1e-12));
    }
    let means = fs::read_to_string(dir.path().join("fit.means.csv")).unwrap();
    assert_eq!(means.lines().next().unwrap(), "time,y1,y2");
    let row: Vec<f64> = means.lines().nth(10).unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert!((row[1] - 2.5).abs() < 1e-12 && (row[2] + 1.0).abs() < 1e-12);
}

fn simulate_and_fit(dir: &Path, estimator: &str, out: &str) {
    if !dir.join("data.csv").exists() {
        sim_config(dir, "sim.json", r#"{"schema_version": 1, "p": 3, "n": 200, "seed": 2}"#);
        ok(&dyncov(dir, &["simulate", "--config", "sim.json", "--out", "data.csv"]));
    }
    ok(&dyncov(
        dir,
        &[
            "fit", "--data", "data.csv", "--out", out, "--domain-end", "1", "--h-mean", "0.1", "--h-cov", "0.25",
            "--estimator", estimator, "--grid-points", "41",
        ],
    ));
}

#[test]
fn lf_output_is_projection_of_ll_output() {
    let dir = TempDir::new().unwrap();
    simulate_and_fit(dir.path(), "ll", "ll.json");
    simulate_and_fit(dir.path(), "lf", "lf.json");
    let ll = matrices(&json(dir.path().join("ll.json")));
    let lf = json(dir.path().join("lf.json"));
    assert!(lf["psd"].as_array().unwrap().iter().all(|b| b == true));
    for (a, b) in ll.iter().zip(matrices(&lf)) {
        assert_eq!(project_psd(a).unwrap().to_rows(), b.to_rows());
    }
}

#[test]
fn simulate_fit_score_round_trip_matches_in_process() {
    let dir = TempDir::new().unwrap();
    simulate_and_fit(dir.path(), "lf", "fit.json");
    let out = dyncov(dir.path(), &["benchmark", "--score", "fit.json", "--truth", "data.sim.json", "--out", "score.json"]);
    ok(&out);
    let cli_ise = json(dir.path().join("score.json"))["ise"].as_f64().unwrap();

    let sim = SimConfig::draw(3, 200, 2, SpreadReading::Variance).unwrap();
    let data = generate_replicate(&sim, 0).unwrap();
    let grid = linspace(0.0, 1.0, 41);
    let curve = estimate_curve(&data, &grid, 0.1, 0.25, Estimator::LocalFrechet, Kernel::Epanechnikov).unwrap();
    let direct = ise(&curve, &sim).unwrap();
    assert!((cli_ise - direct).abs() <= 1e-12 * direct, "{cli_ise} vs {direct}");
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ise "));
}

#[test]
fn manifest_replay_reproduces_outputs() {
    let dir = TempDir::new().unwrap();
    sim_config(dir.path(), "sim.json", r#"{"schema_version": 1, "p": 2, "n": 120, "seed": 8}"#);
    ok(&dyncov_env(
        dir.path(),
        &["simulate", "--config", "sim.json", "--out", "data.csv"],
        &[("DYNCOV_SEED", "21")],
    ));
    ok(&dyncov(dir.path(), &["fit", "--data", "data.csv", "--out", "fit.json", "--select-bandwidth", "--correlation"]));
    let sim_before = fs::read(dir.path().join("data.csv")).unwrap();
    let fit_before = fs::read(dir.path().join("fit.json")).unwrap();
    let means_before = fs::read(dir.path().join("fit.means.csv")).unwrap();
    let fit = json(dir.path().join("fit.json"));
    assert_eq!(fit["manifest"], "fit.manifest.json");
    assert!(fit["bandwidth_selection"]["h_opt"].as_f64().unwrap() > 0.0);

    ok(&dyncov(dir.path(), &["replay", "data.manifest.json"]));
    ok(&dyncov_env(dir.path(), &["replay", "fit.manifest.json"], &[("DYNCOV_THREADS", "3")]));
    assert_eq!(sim_before, fs::read(dir.path().join("data.csv")).unwrap());
    assert_eq!(fit_before, fs::read(dir.path().join("fit.json")).unwrap());
    assert_eq!(means_before, fs::read(dir.path().join("fit.means.csv")).unwrap());
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = TempDir::new().unwrap();
    sim_config(dir.path(), "sim.json", r#"{"schema_version": 1, "p": 2, "n": 80, "seed": 8}"#);
    ok(&dyncov(dir.path(), &["simulate", "--config", "sim.json", "--out", "data.csv"]));
    let fit = |out: &str, threads: &str| {
        ok(&dyncov_env(dir.path(), &["fit", "--data", "data.csv", "--out", out, "--select-bandwidth"], &[("DYNCOV_THREADS", threads)]));
        fs::read(dir.path().join(out)).unwrap()
    };
    let one = fit("one.json", "1");
    let four = fit("four.json", "4");
    let strip = |bytes: Vec<u8>| String::from_utf8(bytes).unwrap().replace("one.manifest", "").replace("four.manifest", "");
    assert_eq!(strip(one), strip(four));
    assert_eq!(json(dir.path().join("four.manifest.json"))["threads"], 4);
}

#[test]
fn benchmark_smoke_run_counts_rows() {
    let dir = TempDir::new().unwrap();
    ok(&dyncov(
        dir.path(),
        &[
            "benchmark", "--out", "table.csv", "--dims", "2", "--sizes", "40,60", "--replicates", "2", "--estimators",
            "nw,lf", "--h-grid", "0.3,0.5", "--ise-points", "21", "--seed", "4",
        ],
    ));
    let table = fs::read_to_string(dir.path().join("table.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "estimator,p,n,replicates,log_mean_ise,best_bandwidth");
    assert_eq!(table.lines().count() - 1, 2 * 2);
    let runs = fs::read_to_string(dir.path().join("table.runs.csv")).unwrap();
    assert_eq!(runs.lines().next().unwrap(), "p,n,estimator,replicate,ise_h0.3,ise_h0.5");
    assert_eq!(runs.lines().count() - 1, 2 * 2 * 2);
    let manifest = json(dir.path().join("table.manifest.json"));
    assert_eq!(manifest["config"]["replicates"], 2);
    assert_eq!(manifest["config"]["kernel"], "gaussian");
}

#[test]
fn vcm_with_flat_outcomes_is_zero() {
    let dir = TempDir::new().unwrap();
    sim_config(dir.path(), "sim.json", r#"{"schema_version": 1, "p": 2, "n": 150, "seed": 6}"#);
    ok(&dyncov(dir.path(), &["simulate", "--config", "sim.json", "--out", "data.csv"]));
    let data = fs::read_to_string(dir.path().join("data.csv")).unwrap();
    let mut outcomes = String::from("subject,time,outcome\n");
    for line in data.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        outcomes.push_str(&format!("{},{},7\n", f[0], f[1]));
    }
    fs::write(dir.path().join("outcomes.csv"), outcomes).unwrap();
    ok(&dyncov(
        dir.path(),
        &[
            "vcm", "--data", "data.csv", "--outcomes", "outcomes.csv", "--out", "vcm.json", "--domain-end", "1",
            "--h-mean", "0.1", "--h-cov", "0.3", "--lambda", "0.5",
        ],
    ));
    let v = json(dir.path().join("vcm.json"));
    assert_eq!(v["baseline"], 7.0);
    for g in v["gamma"].as_array().unwrap() {
        assert!(floats(g).iter().all(|x| x.abs() < 1e-12));
    }
    assert!(floats(&v["r_squared"]).iter().all(|x| x.abs() < 1e-12));
}

#[test]
fn vcm_beta_solves_ridge_system_of_fitted_covariance() {
    let dir = TempDir::new().unwrap();
    sim_config(dir.path(), "sim.json", r#"{"schema_version": 1, "p": 3, "n": 300, "seed": 6, "vcm": {"noise_sd": 0.5}}"#);
    ok(&dyncov(dir.path(), &["simulate", "--config", "sim.json", "--out", "data.csv"]));
    let common = ["--domain-end", "1", "--h-mean", "0.1", "--h-cov", "0.3", "--grid-points", "21"];
    let mut args = vec!["vcm", "--data", "data.csv", "--outcomes", "data.outcomes.csv", "--out", "vcm.json", "--lambda", "0.2"];
    args.extend_from_slice(&common);
    ok(&dyncov(dir.path(), &args));
    let mut args = vec!["fit", "--data", "data.csv", "--out", "fit.json"];
    args.extend_from_slice(&common);
    ok(&dyncov(dir.path(), &args));

    let v = json(dir.path().join("vcm.json"));
    let sigma = matrices(&json(dir.path().join("fit.json")));
    let gamma: Vec<Vec<f64>> = serde_json::from_value(v["gamma"].clone()).unwrap();
    let beta: Vec<Vec<f64>> = serde_json::from_value(v["beta"].clone()).unwrap();
    let r2 = floats(&v["r_squared"]);
    for (t, s) in sigma.iter().enumerate() {
        let a = s.as_matrix() + DMatrix::identity(3, 3) * 0.2;
        let g = DVector::from_fn(3, |j, _| gamma[j][t]);
        let b = a.lu().solve(&g).unwrap();
        for j in 0..3 {
            assert!((b[j] - beta[j][t]).abs() < 1e-9 * (1.0 + b[j].abs()));
        }
        assert!((g.dot(&b).max(0.0) - r2[t]).abs() < 1e-9 * (1.0 + r2[t]));
    }
}

#[test]
fn vcm_selects_lambda_by_default() {
    let dir = TempDir::new().unwrap();
    sim_config(dir.path(), "sim.json", r#"{"schema_version": 1, "p": 2, "n": 200, "seed": 1, "vcm": {"noise_sd": 0.5}}"#);
    ok(&dyncov(dir.path(), &["simulate", "--config", "sim.json", "--out", "d.csv"]));
    ok(&dyncov(
        dir.path(),
        &["vcm", "--data", "d.csv", "--outcomes", "d.outcomes.csv", "--out", "v.json", "--domain-end", "1", "--h-cov", "0.3"],
    ));
    let v = json(dir.path().join("v.json"));
    let candidates = floats(&v["lambda_scores"]["candidates"]);
    assert!(candidates.contains(&v["lambda"].as_f64().unwrap()));
}

#[test]
fn fpca_from_curve_csv_and_fit() {
    let dir = TempDir::new().unwrap();
    let grid = linspace(0.0, 1.0, 11);
    let mut csv = String::from("label");
    for x in &grid {
        csv.push_str(&format!(",{x:?}"));
    }
    csv.push('\n');
    let scales = [-1.5, -0.5, 0.25, 0.5, 1.25];
    for (i, a) in scales.iter().enumerate() {
        csv.push_str(&format!("c{i}"));
        for x in &grid {
            csv.push_str(&format!(",{:?}", 1.0 + a * (std::f64::consts::PI * x).sin()));
        }
        csv.push('\n');
    }
    fs::write(dir.path().join("curves.csv"), csv).unwrap();
    ok(&dyncov(
        dir.path(),
        &["fpca", "--curves", "curves.csv", "--components", "1", "--out", "f.json", "--quantiles", "0.25,0.5"],
    ));
    let f = json(dir.path().join("f.json"));
    assert!((floats(&f["fve"])[0] - 1.0).abs() < 1e-10);
    // Quantile oracle: sort each column, interpolate at (N - 1) q.
    let bands = f["bands"].as_array().unwrap();
    for (b, q) in bands.iter().zip([0.25, 0.5]) {
        let values = floats(&b["values"]);
        for (t, x) in grid.iter().enumerate() {
            let mut col: Vec<f64> = scales.iter().map(|a| 1.0 + a * (std::f64::consts::PI * x).sin()).collect();
            col.sort_by(f64::total_cmp);
            let pos = 4.0 * q;
            let lo = pos as usize;
            let expected = col[lo] + (pos - lo as f64) * (col[(lo + 1).min(4)] - col[lo]);
            assert!((values[t] - expected).abs() < 1e-14);
        }
    }

    simulate_and_fit(dir.path(), "lf", "fit.json");
    ok(&dyncov(
        dir.path(),
        &["fpca", "--fit", "fit.json", "--components", "2", "--out", "g.json", "--curves-out", "corr.csv"],
    ));
    let g = json(dir.path().join("g.json"));
    assert_eq!(g["labels"], serde_json::json!(["0-1", "0-2", "1-2"]));
    assert_eq!(g["scores"].as_array().unwrap().len(), 3);
    let corr = fs::read_to_string(dir.path().join("corr.csv")).unwrap();
    assert_eq!(corr.lines().count(), 4);
}

#[test]
fn exit_codes_follow_failure_class() {
    let dir = TempDir::new().unwrap();
    let code = |args: &[&str]| dyncov(dir.path(), args).status.code();
    // Usage errors and bad config files.
    assert_eq!(code(&["fit", "--data", "x.csv", "--out", "y.json"]), Some(2));
    sim_config(dir.path(), "bad.json", r#"{"schema_version": 1, "p": 2, "n": 5, "seed": 1, "extra": true}"#);
    let out = dyncov(dir.path(), &["simulate", "--config", "bad.json", "--out", "d.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown field `extra`"));
    sim_config(dir.path(), "v2.json", r#"{"schema_version": 2, "p": 2, "n": 5, "seed": 1}"#);
    assert_eq!(code(&["simulate", "--config", "v2.json", "--out", "d.csv"]), Some(2));
    // Data errors.
    assert_eq!(code(&["fit", "--data", "missing.csv", "--out", "y.json", "--h-cov", "0.2"]), Some(3));
    fs::write(dir.path().join("broken.csv"), "subject,time,y1\n0,0.1,1\n1,zero,2\n").unwrap();
    let out = dyncov(dir.path(), &["fit", "--data", "broken.csv", "--out", "y.json", "--h-cov", "0.2"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
    fs::write(dir.path().join("header.csv"), "id,time,y1\n0,0.1,1\n").unwrap();
    assert_eq!(code(&["fit", "--data", "header.csv", "--out", "y.json", "--h-cov", "0.2"]), Some(3));
    // Numerical failure: a window too narrow to hold two observations.
    sim_config(dir.path(), "sim.json", r#"{"schema_version": 1, "p": 2, "n": 30, "seed": 1}"#);
    assert_eq!(code(&["simulate", "--config", "sim.json", "--out", "d.csv"]), Some(0));
    let out = dyncov(
        dir.path(),
        &["fit", "--data", "d.csv", "--out", "y.json", "--domain-end", "1", "--h-mean", "0.3", "--h-cov", "0.001"],
    );
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("degenerate"));
}
