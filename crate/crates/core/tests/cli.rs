use std::path::Path;
use std::process::{Command, Output};

use cgp::cli::{read_summary, METRICS_HEADER};
use cgp::model::Checkpoint;
use serde_json::{json, Value};

fn cgp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgp"))
        .args(args)
        .current_dir(dir)
        .env_remove("CGP_PRECISION")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, v: &Value) {
    std::fs::write(dir.join(name), v.to_string()).unwrap();
}

fn sbm() -> Value {
    json!({"n_nodes": 60, "n_classes": 3, "d": 8, "intra_p": 0.3, "inter_p": 0.03,
           "feature_noise": 0.5, "seed": 9})
}

fn small_run() -> Value {
    json!({"sbm": sbm(), "epochs": 30, "hidden": 16, "dt": 3, "n": 5})
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn prepare_writes_dataset_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "sbm.json", &sbm());
    for out in ["a", "b"] {
        let o = cgp(&["prepare", "--config", "sbm.json", "--out", out], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        let stdout = String::from_utf8_lossy(&o.stdout);
        assert!(stdout.contains("homophily"), "{stdout}");
    }
    for f in ["edges.tsv", "features.tsv", "labels.tsv", "splits.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
    let (g, s) = cgp::graph::load_dataset(dir.path().join("a")).unwrap();
    assert_eq!(g.n_nodes(), 60);
    s.validate(60).unwrap();
}

#[test]
fn prepare_rejects_bad_probability() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = sbm();
    cfg["intra_p"] = json!(1.1);
    write(dir.path(), "sbm.json", &cfg);
    let o = cgp(&["prepare", "--config", "sbm.json", "--out", "d"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("probability out of range"), "{}", stderr(&o));
}

#[test]
fn prepare_then_train_from_directory() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "sbm.json", &sbm());
    assert!(cgp(&["prepare", "--config", "sbm.json", "--out", "data"], dir.path()).status.success());
    let mut run = small_run();
    run.as_object_mut().unwrap().remove("sbm");
    run["dataset"] = json!("data");
    run["out"] = json!("run");
    write(dir.path(), "run.json", &run);
    let o = cgp(&["train", "--config", "run.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("run/report.json").exists());
}

#[test]
fn baseline_train_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "run.json", &small_run());
    let o = cgp(&["train", "--config", "run.json", "--out", "out"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");

    let report = read_json(&out.join("report.json"));
    for k in ["final_sparsity_w", "final_sparsity_a", "final_sparsity_x"] {
        assert_eq!(report[k], json!(0.0), "{k}");
    }

    let mut rdr = csv::Reader::from_path(out.join("metrics.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), METRICS_HEADER);
    assert_eq!(rdr.records().count(), 30);

    for f in ["weights.tsv", "edges.tsv", "features.tsv"] {
        let text = std::fs::read_to_string(out.join("masks").join(f)).unwrap();
        assert!(text.lines().all(|l| l.split('\t').nth(1) == Some("1")), "{f}");
    }
    let ck = Checkpoint::load(out.join("checkpoint.json")).unwrap();
    assert_eq!(json!(ck.epoch), report["best_epoch"]);
}

#[test]
fn config_echo_reproduces_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = small_run();
    run["p_w"] = json!(0.7);
    run["p_a"] = json!(0.3);
    run["regrowth"] = json!("random");
    write(dir.path(), "run.json", &run);
    assert!(cgp(&["train", "--config", "run.json", "--out", "first", "--seed", "4"], dir.path()).status.success());
    let o = cgp(&["train", "--config", "first/config.json", "--out", "second"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let a = std::fs::read(dir.path().join("first/report.json")).unwrap();
    let b = std::fs::read(dir.path().join("second/report.json")).unwrap();
    assert_eq!(a, b);
    assert_eq!(read_json(&dir.path().join("first/report.json"))["seed"], json!(4));
}

#[test]
fn default_hyperparameters_are_echoed() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "run.json", &json!({"sbm": sbm(), "epochs": 101}));
    let o = cgp(&["train", "--config", "run.json", "--out", "out"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = &read_json(&dir.path().join("out/report.json"))["config"];
    assert_eq!(cfg["lr"], json!(0.01));
    assert_eq!(cfg["weight_decay"], json!(5e-4));
    assert_eq!(cfg["hidden"], json!(512));
}

#[test]
fn schedule_longer_than_training_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = small_run();
    run["epochs"] = json!(10);
    write(dir.path(), "run.json", &run);
    let o = cgp(&["train", "--config", "run.json", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("schedule exceeds training length"), "{}", stderr(&o));
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = small_run();
    run["learning_rate"] = json!(0.1);
    write(dir.path(), "run.json", &run);
    let o = cgp(&["train", "--config", "run.json", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn divergence_exits_3_with_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = small_run();
    run["lr"] = json!(1e300);
    write(dir.path(), "run.json", &run);
    let o = cgp(&["train", "--config", "run.json", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("at epoch 1"), "{}", stderr(&o));
    // Rows up to the failure are kept.
    let rows = csv::Reader::from_path(dir.path().join("out/metrics.csv")).unwrap().records().count();
    assert_eq!(rows, 1);
}

#[test]
fn precision_env_override() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "run.json", &small_run());
    let run = |value: &str, out: &str| {
        Command::new(env!("CARGO_BIN_EXE_cgp"))
            .args(["train", "--config", "run.json", "--out", out])
            .current_dir(dir.path())
            .env("CGP_PRECISION", value)
            .output()
            .unwrap()
    };
    let o = run("single", "out");
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read_json(&dir.path().join("out/report.json"));
    assert_eq!(report["config"]["precision"], json!("single"));
    assert_eq!(run("quad", "bad").status.code(), Some(2));
}

#[test]
fn sweep_single_baseline_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = small_run();
    run["grid_p_w"] = json!([0.0]);
    run["grid_p_a"] = json!([0.0]);
    run["grid_p_x"] = json!([0.0]);
    write(dir.path(), "run.json", &run);
    let o = cgp(&["sweep", "--config", "run.json", "--out", "sw"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_summary(&dir.path().join("sw/summary.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].status, "ok");
}

#[test]
fn sweep_grid_cardinality_seeds_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = small_run();
    run["grid_p_w"] = json!([0.5, 0.9]);
    run["grid_p_a"] = json!([0.1, 0.4]);
    run["repeats"] = json!(3);
    run["seed"] = json!(10);
    write(dir.path(), "run.json", &run);
    let o = cgp(&["sweep", "--config", "run.json", "--out", "sw", "--jobs", "3"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_summary(&dir.path().join("sw/summary.csv")).unwrap();
    assert_eq!(rows.len(), 12);
    let seeds: Vec<u64> = rows.iter().take(3).map(|r| r.seed).collect();
    assert_eq!(seeds, [10, 11, 12]);
    assert!(rows.iter().all(|r| r.status == "ok"));
    let header = std::fs::read_to_string(dir.path().join("sw/summary.csv")).unwrap();
    assert!(header.starts_with("p_w,p_a,p_x,seed,test_acc,inference_MACs,training_FLOPs,status"));

    // Parallel points give the same numbers as a sequential sweep.
    let o = cgp(&["sweep", "--config", "run.json", "--out", "seq"], dir.path());
    assert!(o.status.success());
    assert_eq!(read_summary(&dir.path().join("seq/summary.csv")).unwrap(), rows);

    let o = cgp(&["report", "--config", "sw"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let long = csv::Reader::from_path(dir.path().join("sw/summary_long.csv")).unwrap().records().count();
    assert_eq!(long, 36);
}

#[test]
fn sweep_marks_failed_points_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = small_run();
    // Starting at half density, a 0.3 weight target is unreachable.
    run["init_weight_density"] = json!(0.5);
    run["grid_p_w"] = json!([0.3, 0.8]);
    write(dir.path(), "run.json", &run);
    let o = cgp(&["sweep", "--config", "run.json", "--out", "sw"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_summary(&dir.path().join("sw/summary.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].status.starts_with("error"), "{:?}", rows[0]);
    assert_eq!(rows[0].test_acc, None);
    assert_eq!(rows[1].status, "ok");
}

#[test]
fn sweep_empty_grid_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = small_run();
    run["grid_p_a"] = json!([]);
    write(dir.path(), "run.json", &run);
    let o = cgp(&["sweep", "--config", "run.json", "--out", "sw"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty grid"));
}

#[test]
fn missing_config_and_bad_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cgp(&["train", "--config", "nope.json", "--out", "o"], dir.path()).status.code(), Some(2));
    assert_eq!(cgp(&["train", "--bogus"], dir.path()).status.code(), Some(2));
    assert_eq!(cgp(&["report", "--config", "nothing.csv"], dir.path()).status.code(), Some(2));
}
