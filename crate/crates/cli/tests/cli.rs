use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fuzzy-bridge"));
    c.env_remove("FUZZY_BRIDGE_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn gen_sinc(dir: &TempDir) -> String {
    let data = p(dir, "train.csv");
    ok(&[
        "gen",
        "--generator",
        "sinc2d",
        "--n",
        "120",
        "--seed",
        "3",
        "--out",
        &data,
    ]);
    data
}

#[test]
fn train_writes_model_metrics_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_sinc(&dir);
    let model = p(&dir, "anfis.json");
    ok(&[
        "train", "--method", "anfis", "--data", &data, "--epochs", "5", "--out", &model,
    ]);
    let metrics: Value = serde_json::from_str(&read(p(&dir, "anfis.metrics.json"))).unwrap();
    assert_eq!(metrics["method"], "anfis");
    assert_eq!(metrics["rules"], 4);
    assert!(metrics["train_mse"].as_f64().unwrap() >= 0.0);
    let history = read(p(&dir, "anfis.history.jsonl"));
    assert_eq!(history.lines().count(), 5);
    for line in history.lines() {
        serde_json::from_str::<Value>(line).unwrap();
    }
}

#[test]
fn single_leaf_cart_is_one_unconditional_rule() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_sinc(&dir);
    let model = p(&dir, "cart.json");
    ok(&[
        "train",
        "--method",
        "cart",
        "--data",
        &data,
        "--max-leaves",
        "1",
        "--out",
        &model,
    ]);
    let out = ok(&["inspect", "--model", &model]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        text.lines()
            .filter(|l| l.starts_with("IF TRUE THEN"))
            .count(),
        1,
        "{text}"
    );
}

#[test]
fn moe_metrics_record_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_sinc(&dir);
    let model = p(&dir, "moe.json");
    ok(&[
        "train", "--method", "moe", "--data", &data, "--epochs", "3", "--out", &model,
    ]);
    let metrics: Value = serde_json::from_str(&read(p(&dir, "moe.metrics.json"))).unwrap();
    assert_eq!(metrics["lambda"], 0.5);
    assert_eq!(metrics["loss"], "hybrid");
}

#[test]
fn rbfn_conversion_refuses_affine_consequents() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_sinc(&dir);
    let model = p(&dir, "anfis.json");
    ok(&[
        "train", "--method", "anfis", "--data", &data, "--epochs", "1", "--out", &model,
    ]);
    let out = run(&[
        "convert",
        "--from",
        "tsk",
        "--to",
        "rbfn",
        "--model",
        &model,
        "--out",
        &p(&dir, "r.json"),
    ]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("(2)"));
    ok(&[
        "convert",
        "--from",
        "tsk",
        "--to",
        "rbfn",
        "--generalized",
        "--model",
        &model,
        "--out",
        &p(&dir, "r.json"),
    ]);
}

#[test]
fn tsk_moe_round_trip_is_file_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_sinc(&dir);
    let tsk = p(&dir, "tsk.json");
    ok(&[
        "train",
        "--method",
        "anfis",
        "--init",
        "cluster",
        "--clusters",
        "3",
        "--data",
        &data,
        "--epochs",
        "2",
        "--out",
        &tsk,
    ]);
    let moe = p(&dir, "moe.json");
    let back = p(&dir, "back.json");
    ok(&[
        "convert", "--from", "tsk", "--to", "moe", "--model", &tsk, "--out", &moe,
    ]);
    ok(&[
        "convert", "--from", "moe", "--to", "tsk", "--model", &moe, "--out", &back,
    ]);
    assert_eq!(read(&tsk), read(&back));
}

#[test]
fn convert_checks_declared_source_kind() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_sinc(&dir);
    let model = p(&dir, "cart.json");
    ok(&[
        "train", "--method", "cart", "--data", &data, "--out", &model,
    ]);
    let out = run(&[
        "convert",
        "--from",
        "tsk",
        "--to",
        "moe",
        "--model",
        &model,
        "--out",
        &p(&dir, "x.json"),
    ]);
    assert_ne!(code(&out), 0);
}

#[test]
fn verify_suites_pass() {
    for suite in ["equivalence", "gradients", "oracles"] {
        let out = ok(&[
            "verify", "--suite", suite, "--trials", "3", "--format", "json",
        ]);
        let report: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(report["passed"], true, "{suite}");
    }
}

#[test]
fn verify_rejects_corrupted_model() {
    let dir = tempfile::tempdir().unwrap();
    let bad = p(&dir, "bad.json");
    std::fs::write(&bad, "{\"rules\": [{\"antecedent\": 3}]").unwrap();
    assert_eq!(code(&run(&["verify", "--model", &bad])), 3);
}

#[test]
fn argument_errors_exit_2() {
    assert_eq!(
        code(&run(&[
            "train", "--method", "nonsense", "--data", "x.csv", "--out", "m.json"
        ])),
        2
    );
    assert_eq!(code(&run(&["train", "--no-such-flag"])), 2);
    assert_eq!(code(&run(&["gen", "--generator", "sinc2d"])), 2);
}

#[test]
fn missing_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--method",
        "cart",
        "--data",
        &p(&dir, "nope.csv"),
        "--out",
        &p(&dir, "m.json"),
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn predict_and_eval_emit_valid_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_sinc(&dir);
    let model = p(&dir, "stack.json");
    ok(&[
        "train", "--method", "stack", "--data", &data, "--out", &model,
    ]);
    let preds = p(&dir, "preds.csv");
    ok(&[
        "predict", "--model", &model, "--data", &data, "--out", &preds,
    ]);
    assert_eq!(
        read(&preds)
            .lines()
            .filter(|l| !l.trim().is_empty())
            .count(),
        121
    );
    let out = ok(&[
        "eval", "--model", &model, "--data", &data, "--format", "json",
    ]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["mse"].as_f64().unwrap() >= 0.0, "{v}");
}

fn train_seeded(dir: &TempDir, name: &str, extra: &[&str], env_seed: Option<&str>) -> String {
    let data = gen_sinc(dir);
    let model = p(dir, name);
    let mut c = bin();
    c.args([
        "train", "--method", "moe", "--epochs", "2", "--data", &data, "--out", &model,
    ])
    .args(extra);
    if let Some(s) = env_seed {
        c.env("FUZZY_BRIDGE_SEED", s);
    }
    let out = c.output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    read(PathBuf::from(model))
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_seeded(&dir, "a.json", &["--seed", "9"], None);
    let b = train_seeded(&dir, "b.json", &["--seed", "9"], None);
    assert_eq!(a, b);
    assert_eq!(
        read(p(&dir, "a.metrics.json")).replace("a.json", ""),
        read(p(&dir, "b.metrics.json")).replace("b.json", "")
    );
}

#[test]
fn seed_precedence_is_flag_then_config_then_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = p(&dir, "run.cfg");
    std::fs::write(&cfg, "seed = 9\n").unwrap();
    let by_flag = train_seeded(&dir, "f.json", &["--seed", "9"], Some("4"));
    let by_config = train_seeded(&dir, "c.json", &["--config", &cfg], Some("4"));
    let by_env = train_seeded(&dir, "e.json", &[], Some("9"));
    let other = train_seeded(&dir, "o.json", &[], Some("4"));
    let flag_beats_config = train_seeded(&dir, "fc.json", &["--config", &cfg, "--seed", "4"], None);
    assert_eq!(by_flag, by_config);
    assert_eq!(by_flag, by_env);
    assert_ne!(by_flag, other);
    assert_eq!(flag_beats_config, other);
}

#[test]
fn config_supplies_training_options() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_sinc(&dir);
    let cfg = p(&dir, "run.cfg");
    std::fs::write(&cfg, "method = cart\nmax_leaves = 3\n").unwrap();
    let model = p(&dir, "t.json");
    ok(&["--config", &cfg, "train", "--data", &data, "--out", &model]);
    let metrics: Value = serde_json::from_str(&read(p(&dir, "t.metrics.json"))).unwrap();
    assert_eq!(metrics["leaves"], 3);
    ok(&[
        "--config",
        &cfg,
        "train",
        "--data",
        &data,
        "--out",
        &model,
        "--max-leaves",
        "2",
    ]);
    let metrics: Value = serde_json::from_str(&read(p(&dir, "t.metrics.json"))).unwrap();
    assert_eq!(metrics["leaves"], 2);
}

#[test]
fn bad_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = p(&dir, "run.cfg");
    std::fs::write(&cfg, "colour = red\n").unwrap();
    assert_eq!(code(&run(&["--config", &cfg, "verify"])), 2);
}

#[test]
fn json_format_emits_one_document() {
    let dir = tempfile::tempdir().unwrap();
    let data = p(&dir, "d.csv");
    let out = ok(&[
        "--format",
        "json",
        "gen",
        "--generator",
        "step",
        "--n",
        "10",
        "--out",
        &data,
    ]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["rows"], 10);
}
