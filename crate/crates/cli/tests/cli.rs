use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn scorelab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scorelab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn records_without_times(dir: &Path) -> Vec<String> {
    fs::read_to_string(dir.join("records.csv"))
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

#[test]
fn wp_between_two_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    fs::write(&a, "w,x1,x2\n0.5,0,0\n0.5,1,0\n").unwrap();
    fs::write(&b, "w,x1,x2\n0.5,0,3\n0.5,1,4\n").unwrap();
    let out = dir.path().join("out");
    let o = scorelab(&["wp", path_str(&a), path_str(&b), "--p", "2", "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // Matching (0,0)→(0,3) and (1,0)→(1,4): W₂² = (9 + 16)/2.
    let value: f64 = String::from_utf8(o.stdout).unwrap().trim().parse().unwrap();
    assert!((value - 12.5f64.sqrt()).abs() < 1e-12);
    let records = fs::read_to_string(out.join("records.csv")).unwrap();
    assert!(records.starts_with("experiment,generator,n,rep,seed,metric,value,wall_time\n"));
    assert!(records.contains(",wp,"));
}

#[test]
fn dim_writes_profile_and_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("seg.csv");
    let rows: String = (0..400).map(|i| format!("0.0025,{},0\n", i as f64 / 399.0)).collect();
    fs::write(&m, format!("w,x1,x2\n{rows}")).unwrap();
    let out = dir.path().join("out");
    let o = scorelab(&["dim", path_str(&m), "--p", "0.3", "--q", "2", "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let profile = fs::read_to_string(out.join("profile.csv")).unwrap();
    assert!(profile.starts_with("epsilon,count\n"));
    let mink: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("minkowski.json")).unwrap()).unwrap();
    let slope = mink["slope"].as_f64().unwrap();
    assert!((0.8..=1.2).contains(&slope), "{slope}");
    let wpq: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("wasserstein_pq.json")).unwrap()).unwrap();
    assert_eq!(wpq["kind"], "wasserstein_pq");
    assert_eq!(wpq["p"].as_f64(), Some(0.3));
    assert!(fs::read_to_string(out.join("dim.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn emp_rate_outputs_and_thread_invariance() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    fs::write(
        &config,
        "[experiment]\nid = \"tiny\"\nreps = 2\nn_grid = [16, 32, 64]\nseed = 3\n\n[generator]\nkind = \"circle\"\ndim = 3\n",
    )
    .unwrap();
    let run = |threads: &str, name: &str| {
        let out = dir.path().join(name);
        let o = scorelab(&["emp-rate", "--config", path_str(&config), "--threads", threads, "--out", path_str(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let one = run("1", "one");
    let four = run("4", "four");
    assert_eq!(records_without_times(&one), records_without_times(&four));
    let fit = fs::read_to_string(one.join("fit.csv")).unwrap();
    let mut lines = fit.lines();
    assert_eq!(lines.next(), Some("slope,intercept,stderr,n_points"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[3], "3");
    assert!(row[0].parse::<f64>().unwrap() < 0.0);
    assert!(fs::read_to_string(one.join("tiny.svg")).unwrap().starts_with("<svg"));
    let echoed = fs::read_to_string(one.join("config.toml")).unwrap();
    assert!(echoed.contains("n_grid = [16, 32, 64]"));
}

#[test]
fn flags_override_config_values() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    fs::write(&config, "[experiment]\nseed = 3\nreps = 4\nn_grid = [16, 32, 64]\n").unwrap();
    let out = dir.path().join("out");
    let o = scorelab(&[
        "emp-rate", "--config", path_str(&config), "--seed", "9", "--reps", "1", "--n-grid", "8,16,32",
        "--out", path_str(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let echoed: toml::Value = toml::from_str(&fs::read_to_string(out.join("config.toml")).unwrap()).unwrap();
    assert_eq!(echoed["experiment"]["seed"].as_integer(), Some(9));
    assert_eq!(echoed["experiment"]["reps"].as_integer(), Some(1));
    let records = fs::read_to_string(out.join("records.csv")).unwrap();
    assert_eq!(records.lines().filter(|l| l.contains(",wp,")).count(), 3);
}

#[test]
fn train_score_writes_model_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = scorelab(&["train-score", "--n", "32", "--steps", "20", "--hidden", "8", "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(out.join("loss.csv")).unwrap();
    assert!(trace.starts_with("step,loss\n"));
    assert_eq!(trace.lines().count(), 22);
    let model = scorelab::score::Mlp::read_path(out.join("model.txt")).unwrap();
    assert_eq!(model.layer_sizes()[1], 8);
}

#[test]
fn train_score_rejects_measure_without_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.csv");
    fs::write(&m, "w,x1\n0.5,0\n0.5,1\n").unwrap();
    let o = scorelab(&["train-score", "--data", path_str(&m), "--out", path_str(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn checks_exit_status_tracks_failures() {
    let dir = tempfile::tempdir().unwrap();
    let ok = scorelab(&["checks", "--mc-samples", "20000", "--out", path_str(&dir.path().join("ok"))]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    let text = String::from_utf8(ok.stdout).unwrap();
    assert!(text.contains("SKIP kl_bound"));
    let strict = scorelab(&["checks", "--z-max", "1e-12", "--out", path_str(&dir.path().join("strict"))]);
    assert_eq!(strict.status.code(), Some(1));
    let records = fs::read_to_string(dir.path().join("strict/records.csv")).unwrap();
    assert!(records.lines().any(|l| l.contains(".pass,0e0")));
}

#[test]
fn invalid_inputs_exit_with_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[experiment]\nn_grid = [64, 32]\n").unwrap();
    let o = scorelab(&["emp-rate", "--config", path_str(&bad), "--out", path_str(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_grid"));
    let o = scorelab(&["emp-rate", "--n-grid", "8,16,32", "--threads", "0", "--out", path_str(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!scorelab(&["nonsense"]).status.success());
}
