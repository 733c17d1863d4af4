#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn tlrp() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tlrp"));
    cmd.env_remove("TLRP_OUT_DIR");
    cmd
}

/// Runs `tlrp` with `args` and asserts success.
pub fn run_ok(args: &[&str]) -> Output {
    let out = tlrp().args(args).output().expect("tlrp runs");
    assert!(
        out.status.success(),
        "tlrp {args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

pub fn read_json(path: &Path) -> Value {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).expect("valid JSON")
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Validates `value` against `docs/schemas/<name>.schema.json`.
pub fn assert_schema(name: &str, value: &Value) {
    let schema = read_json(&repo_root().join(format!("docs/schemas/{name}.schema.json")));
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = validator.iter_errors(value).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{name} schema violations: {errors:#?}");
}

pub fn config_path() -> PathBuf {
    repo_root().join("configs/keyword.json")
}

/// Small dataset and briefly trained model under `dir`.
pub struct Fixture {
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub model_dir: PathBuf,
}

pub fn fixture(dir: &Path) -> Fixture {
    let data_dir = dir.join("data");
    let model_dir = dir.join("model");
    run_ok(&["gen-data", "--seed", "3", "--n-examples", "200", "--seq-len", "8", "--vocab-size", "30", "--out", s(&data_dir)]);
    let config = dir.join("small.json");
    std::fs::write(
        &config,
        r#"{"model": {"d_model": 8, "n_heads": 2, "n_layers": 2}, "train": {"lr": 0.003, "max_epochs": 2}}"#,
    )
    .unwrap();
    let dataset = data_dir.join("dataset.jsonl");
    run_ok(&["train", "--dataset", s(&dataset), "--config", s(&config), "--out", s(&model_dir), "--seed", "5"]);
    Fixture {
        dataset,
        model: model_dir.join("model.json"),
        model_dir,
    }
}

/// Removes timing fields so outputs can be compared across runs.
pub fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for key in ["wall_time_seconds", "mean_time_s", "time_s"] {
                if let Some(slot) = map.get_mut(key) {
                    *slot = Value::Null;
                }
            }
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

/// CSV text with the `mean_time_s` column blanked.
pub fn strip_time_column(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l.to_owned(), |(head, _)| head.to_owned()))
        .collect::<Vec<_>>()
        .join("\n")
}
