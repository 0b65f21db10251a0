use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepreflecs"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn small_dataset(dir: &Path) -> String {
    let spec = dir.join("spec.json");
    std::fs::write(
        &spec,
        r#"{"tracks_per_class":{"car":4,"pedestrian":4,"cyclist":4,"non_obstacle":4}}"#,
    )
    .unwrap();
    let data = dir.join("data.jsonl");
    let out = run(&[
        "generate",
        "--spec",
        spec.to_str().unwrap(),
        "--seed",
        "2",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(stdout_json(&out)["samples"].as_u64().unwrap() > 0);
    data.to_str().unwrap().to_owned()
}

#[test]
fn generate_train_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let model = dir.path().join("forest.bin");
    let model = model.to_str().unwrap();
    let trained = stdout_json(&run(&[
        "train", "--method", "forest", "--data", &data, "--seed", "1", "--out", model,
    ]));
    assert_eq!(trained["test"]["method"], "craftedforest");

    let report = dir.path().join("report.json");
    let out = run(&[
        "eval",
        "--model",
        model,
        "--data",
        &data,
        "--json",
        report.to_str().unwrap(),
    ]);
    let printed = stdout_json(&out);
    let written: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(printed, written);
    let counts = printed["confusion"]["counts"].as_array().unwrap();
    assert_eq!(counts.len(), 4);
    let total: u64 = counts
        .iter()
        .flat_map(|r| r.as_array().unwrap())
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(total, printed["n_samples"].as_u64().unwrap());
}

#[test]
fn train_network_with_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"deepreflecs_training":{"epochs":2,"steps_per_epoch":3,"batch_size":8}}"#,
    )
    .unwrap();
    let model = dir.path().join("net.bin");
    let out = run(&[
        "train",
        "--method",
        "deepreflecs",
        "--data",
        &data,
        "--config",
        config.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
    ]);
    let report = stdout_json(&out);
    assert_eq!(report["training"]["epochs"].as_array().unwrap().len(), 2);
    assert_eq!(report["test"]["parameters"], 1284);
    assert_eq!(&std::fs::read(&model).unwrap()[..4], b"RFLN");
}

#[test]
fn errors_are_json_on_stderr() {
    let out = run(&["eval", "--model", "/nonexistent/model", "--data", "/nonexistent/data"]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "io");
    assert!(err["message"].as_str().unwrap().contains("No such file"));

    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.bin");
    std::fs::write(&bogus, b"NOPE0000").unwrap();
    let data = small_dataset(dir.path());
    let out = run(&["eval", "--model", bogus.to_str().unwrap(), "--data", &data]);
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "model_format");
}
