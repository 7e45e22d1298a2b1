use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

use gsan::datasets::TaskKind;
use gsan::tasks::RunConfig;

fn gsan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsan")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn checksums(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            let digest = Sha256::digest(fs::read(e.path()).unwrap()).to_vec();
            (e.file_name().to_string_lossy().into_owned(), digest)
        })
        .collect()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Generates `task` with `seed` under `root/data`, then trains into `root/run`.
fn generate_and_train(root: &Path, task: &str, seed: &str) -> Output {
    let data = root.join("data");
    let g = gsan(&["generate", "--task", task, "--seed", seed, "--out", p(&data)]);
    assert!(g.status.success(), "{}", stderr(&g));
    gsan(&["train", "--task", task, "--seed", seed, "--data", p(&data), "--out", p(&root.join("run"))])
}

#[test]
fn same_seed_gives_identical_archives() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (out, seed) in [(&a, "4"), (&b, "4"), (&c, "5")] {
        let o = gsan(&["generate", "--task", "cyclic", "--seed", seed, "--out", p(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(checksums(&a), checksums(&b));
    assert_ne!(checksums(&a), checksums(&c));
}

#[test]
fn trajectory_archive_reports_two_holes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traj");
    let o = gsan(&["generate", "--task", "trajectory", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o);
    let betti = line.split("betti = [").nth(1).unwrap().split(']').next().unwrap();
    let betti: Vec<usize> = betti.split(", ").map(|b| b.parse().unwrap()).collect();
    assert_eq!(betti[1], 2, "{line}");
}

#[test]
fn invalid_miss_fraction_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = serde_json::to_value(RunConfig::default_for(TaskKind::Mdi)).unwrap();
    cfg["dataset"]["miss_fraction"] = Value::from(1.5);
    let path = dir.path().join("mdi.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let o = gsan(&["generate", "--config", p(&path), "--out", p(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("dataset.miss_fraction"), "{err}");
    assert!(err.contains("line "), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = serde_json::to_value(RunConfig::default_for(TaskKind::Cyclic)).unwrap();
    cfg["learning_rate"] = Value::from(0.1);
    let path = dir.path().join("bad.json");
    fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let o = gsan(&["generate", "--config", p(&path), "--out", p(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn missing_task_and_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = gsan(&["generate", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("task"));
}

#[test]
fn training_twice_gives_identical_metrics_and_eval_matches() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for root in [a.path(), b.path()] {
        let o = generate_and_train(root, "mdi", "2");
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let run = a.path().join("run");
    for file in ["metrics.json", "metrics.csv", "attention_histogram.csv"] {
        assert_eq!(
            fs::read(run.join(file)).unwrap(),
            fs::read(b.path().join("run").join(file)).unwrap(),
            "{file}"
        );
    }
    let metrics = read_json(&run.join("metrics.json"));
    assert_eq!(metrics["format_version"], 1);
    assert_eq!(metrics["seed"], 2);
    assert_eq!(metrics["config"]["seed"], 2);
    assert_eq!(metrics["metric"], "within_5pct_accuracy");
    assert!(metrics["parameter_count"].as_u64().unwrap() > 0);
    assert!(read_json(&run.join("timing.json"))["wall_seconds"].as_f64().unwrap() > 0.0);

    let o = gsan(&[
        "eval",
        "--checkpoint",
        p(&run.join("checkpoint")),
        "--data",
        p(&a.path().join("data")),
        "--out",
        p(&run),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let eval = read_json(&run.join("eval.json"));
    assert_eq!(eval["test_metric"], metrics["test_metric"]);
    assert_eq!(eval["config"], metrics["config"]["model"]);
}

#[test]
fn train_rejects_an_archive_from_other_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(gsan(&["generate", "--task", "cyclic", "--out", p(&data)]).status.success());
    let o = gsan(&["train", "--task", "mdi", "--data", p(&data), "--out", p(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dataset"));
}

#[test]
fn eval_on_mismatched_data_is_incompatible() {
    let dir = tempfile::tempdir().unwrap();
    let o = generate_and_train(dir.path(), "mdi", "0");
    assert!(o.status.success(), "{}", stderr(&o));
    let other = dir.path().join("other");
    assert!(gsan(&["generate", "--task", "cyclic", "--out", p(&other)]).status.success());
    let o = gsan(&["eval", "--checkpoint", p(&dir.path().join("run/checkpoint")), "--data", p(&other)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("checkpoint incompatible"), "{}", stderr(&o));
}

#[test]
fn constant_predictor_scores_chance_auc() {
    let dir = tempfile::tempdir().unwrap();
    let o = generate_and_train(dir.path(), "simplex-prediction", "1");
    assert!(o.status.success(), "{}", stderr(&o));
    let params = dir.path().join("run/checkpoint/params.bin");
    let len = fs::metadata(&params).unwrap().len() as usize;
    fs::write(&params, vec![0u8; len]).unwrap();
    let o = gsan(&[
        "eval",
        "--checkpoint",
        p(&dir.path().join("run/checkpoint")),
        "--data",
        p(&dir.path().join("data")),
        "--out",
        p(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let auc = read_json(&dir.path().join("eval.json"))["test_metric"].as_f64().unwrap();
    assert!((auc - 0.5).abs() <= 0.02, "{auc}");
}

#[test]
fn propcheck_passes_and_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = gsan(&["propcheck", "--trials", "5", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = read_json(&dir.path().join("propcheck.json"));
    assert_eq!(report["passed"], true);
    let names: Vec<&str> = report["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    for expected in [
        "dirac_identity",
        "hodge_orthogonality",
        "projector_convergence",
        "permutation_equivariance",
        "orientation_equivariance",
        "simplicial_awareness",
        "gradient",
        "row_stochastic",
    ] {
        assert!(names.contains(&expected), "{expected} missing from {names:?}");
    }
}

#[test]
fn propcheck_catches_a_boundary_sign_fault() {
    let o = gsan(&["propcheck", "--trials", "5", "--fault", "b2-sign"]);
    assert_eq!(o.status.code(), Some(1));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let failing: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["passed"] == false)
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(failing, vec!["dirac_identity"]);
    assert!(stderr(&o).contains("dirac_identity"));
}

#[test]
fn propcheck_without_trials_is_vacuous() {
    let o = gsan(&["propcheck", "--trials", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["total_trials"], 0);
}
