use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn linkfact(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_linkfact"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = linkfact(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn csv_shape(path: &Path) -> (usize, usize) {
    let text = fs::read_to_string(path).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    (rows.len(), rows[0].split(',').count())
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn error_of(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("error line");
    serde_json::from_str::<Value>(line).expect("error is JSON")["error"].clone()
}

#[test]
fn generate_writes_benchmark_shapes() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["generate", "--dataset", "dog", "--out", "dog"], dir.path());
    ok(&["generate", "--dataset", "swimmer", "--out", "swimmer"], dir.path());
    assert_eq!(csv_shape(&dir.path().join("dog/X.csv")), (400, 16));
    assert_eq!(csv_shape(&dir.path().join("swimmer/X.csv")), (1024, 256));
    let truth = json(&dir.path().join("dog/ground_truth.json"));
    assert_eq!(truth["true_k"], 4);
    assert_eq!(truth["generator"], "dog");
}

#[test]
fn generate_is_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(&["generate", "--dataset", "gaussian", "--m", "100", "--k", "3", "--seed", "7", "--out", out], dir.path());
    }
    ok(&["generate", "--dataset", "gaussian", "--m", "100", "--k", "3", "--seed", "8", "--out", "c"], dir.path());
    let read = |d: &str| fs::read(dir.path().join(d).join("X.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    assert_eq!(csv_shape(&dir.path().join("a/X.csv")), (50, 100));
    assert_eq!(json(&dir.path().join("a/ground_truth.json"))["seed"], 7);
}

#[test]
fn eval_reproduces_stored_run_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    ok(&["generate", "--dataset", "gaussian", "--k", "2", "--seed", "3", "--out", "data"], cwd);
    ok(
        &[
            "run", "--dataset", "csv", "--path", "data/X.csv", "--k-min", "1", "--k-max", "3",
            "--perturbations", "3", "--folds", "1", "--test-size", "0.2", "--out", "res",
        ],
        cwd,
    );
    let run = cwd.join("res/runs/ts0.2_fold0");
    let args = |out: &'static str| {
        vec![
            "eval".to_string(),
            "--x".into(),
            "data/X.csv".into(),
            "--predictions".into(),
            run.join("predictions.csv").display().to_string(),
            "--uncertainty".into(),
            run.join("uncertainty.csv").display().to_string(),
            "--split".into(),
            run.join("split.csv").display().to_string(),
            "--out".into(),
            out.into(),
        ]
    };
    let first: Vec<String> = args("e1");
    let second: Vec<String> = args("e2");
    ok(&first.iter().map(String::as_str).collect::<Vec<_>>(), cwd);
    ok(&second.iter().map(String::as_str).collect::<Vec<_>>(), cwd);
    for name in ["report.csv", "report.json"] {
        assert_eq!(fs::read(cwd.join("e1").join(name)).unwrap(), fs::read(cwd.join("e2").join(name)).unwrap());
    }

    let stored = json(&run.join("run.json"));
    let selected = stored["evaluations"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["selected"] == true)
        .unwrap()["report"]
        .clone();
    let fresh = json(&cwd.join("e1/report.json"));
    for key in ["rmse", "rmse_non_abstained", "fraction_abstained", "pearson_uq_error", "smr"] {
        let (a, b) = (stored_f64(&selected, key), stored_f64(&fresh, key));
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{key}: {a} vs {b}");
    }
}

fn stored_f64(v: &Value, key: &str) -> f64 {
    v[key].as_f64().unwrap_or_else(|| panic!("{key} missing in {v}"))
}

#[test]
fn eval_on_perfect_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    ok(&["generate", "--dataset", "dog", "--out", "dog"], cwd);
    ok(&["split", "--dataset", "csv", "--path", "dog/X.csv", "--test-size", "0.3", "--folds", "1", "--out", "s"], cwd);
    ok(
        &["eval", "--x", "dog/X.csv", "--predictions", "dog/X.csv", "--split", "s/split_ts0.3_fold0.csv", "--out", "e"],
        cwd,
    );
    let report = json(&cwd.join("e/report.json"));
    assert_eq!(report["rmse"], 0.0);
    assert_eq!(report["roc_auc"], 1.0);
    assert_eq!(report["pr_auc"], 1.0);
}

#[test]
fn split_command_matches_the_run_split() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    ok(&["generate", "--dataset", "gaussian", "--k", "2", "--out", "data"], cwd);
    let common = ["--dataset", "csv", "--path", "data/X.csv", "--test-size", "0.3", "--folds", "2", "--seed", "11"];
    let mut split = vec!["split", "--out", "s"];
    split.extend(common);
    ok(&split, cwd);
    let mut run = vec!["run", "--out", "r", "--k-min", "1", "--k-max", "2", "--perturbations", "2"];
    run.extend(common);
    ok(&run, cwd);
    for fold in 0..2 {
        assert_eq!(
            fs::read(cwd.join(format!("s/split_ts0.3_fold{fold}.csv"))).unwrap(),
            fs::read(cwd.join(format!("r/runs/ts0.3_fold{fold}/split.csv"))).unwrap()
        );
    }
}

#[test]
fn lmf_ensemble_predictions_are_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    ok(
        &[
            "run", "--dataset", "dog", "--method", "wnmfk_lmf", "--k-min", "3", "--k-max", "4",
            "--perturbations", "2", "--folds", "1", "--lmf-max-iters", "200", "--out", "r",
        ],
        cwd,
    );
    let text = fs::read_to_string(cwd.join("r/runs/ts0.1_fold0/predictions.csv")).unwrap();
    let values: Vec<f64> = text.lines().flat_map(|l| l.split(',')).map(|v| v.parse().unwrap()).collect();
    assert_eq!(values.len(), 400 * 16);
    assert!(values.iter().all(|&p| p > 0.0 && p < 1.0));
}

#[test]
fn flags_override_the_config_file_and_jobs_do_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    fs::write(
        cwd.join("sweep.txt"),
        "# small sweep\ndataset = gaussian\nrows = 20\ncols = 30\ntrue_k = 2\nk_min = 1\nk_max = 3\n\
         perturbations = 2\nfolds = 3\ntest_sizes = 0.1, 0.3\n",
    )
    .unwrap();
    ok(&["run", "--config", "sweep.txt", "--folds", "2", "--jobs", "1", "--out", "a"], cwd);
    ok(&["run", "--config", "sweep.txt", "--folds", "2", "--jobs", "2", "--out", "b"], cwd);
    let config = fs::read_to_string(cwd.join("a/config.txt")).unwrap();
    assert!(config.lines().any(|l| l == "folds = 2"));
    assert!(config.lines().any(|l| l == "rows = 20"));
    assert_eq!(
        fs::read(cwd.join("a/aggregate.csv")).unwrap(),
        fs::read(cwd.join("b/aggregate.csv")).unwrap()
    );
    let rows = fs::read_to_string(cwd.join("a/aggregate.csv")).unwrap().lines().count();
    // Header plus the selected rank of two test sizes × two folds.
    assert_eq!(rows, 1 + 2 * 2);
}

#[test]
fn bench_reports_each_solver() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        &["bench", "--dataset", "planted", "--rows", "20", "--cols", "15", "--k", "2", "--k-min", "2", "--k-max", "2", "--max-iters", "20"],
        dir.path(),
    );
    let solvers: Vec<&str> = out.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(solvers, ["nmf", "wnmf", "rnmf", "bnmf", "lmf"]);
}

#[test]
fn failures_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();

    let out = linkfact(&["eval", "--x", "missing.csv", "--predictions", "missing.csv", "--split", "s.csv"], cwd);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_of(&out)["kind"], "io");

    let out = linkfact(&["run", "--method", "bnmfk", "--threshold", "none"], cwd);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_of(&out)["kind"], "parameter");

    fs::write(cwd.join("bad.txt"), "folds = 2\nnot a pair\n").unwrap();
    let out = linkfact(&["run", "--config", "bad.txt"], cwd);
    let err = error_of(&out);
    assert_eq!(err["kind"], "parse");
    assert!(err["message"].as_str().unwrap().contains('2'));

    let out = linkfact(&["run", "--no-such-flag", "1"], cwd);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["kind"], "usage");
}
