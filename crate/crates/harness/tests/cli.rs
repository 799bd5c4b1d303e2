use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
name = "cli_small"
seed = 4
replicates = 2

[data]
source = "synthetic"
distributions = ["RS-G"]
n = 2000

[eval]
metrics = ["sre", "tre"]
bins = 0

[[models]]
label = "TranSUN(log)"
scheme = "transun"
transform = "log1p"
"#;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("transun-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn transun(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_transun")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn usage_errors() {
    assert_eq!(code(&transun(&["--help"])), 0);
    assert_eq!(code(&transun(&["frobnicate"])), 1);
    assert_eq!(code(&transun(&["synth"])), 1);
    assert_eq!(code(&transun(&["synth", "--dist", "RS-Q"])), 1);
}

#[test]
fn config_errors_exit_one() {
    let dir = scratch("bad-config");
    let typo = write(&dir, "typo.toml", &SMALL.replace("replicates", "replicate"));
    let out = transun(&["experiment", "--config", &typo]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("hint:"));
    let invalid = write(&dir, "invalid.toml", &SMALL.replace("n = 2000", "n = 0"));
    assert_eq!(code(&transun(&["experiment", "--config", &invalid])), 1);
    let missing = dir.join("nowhere.toml");
    assert_eq!(code(&transun(&["experiment", "--config", missing.to_str().unwrap()])), 1);
}

#[test]
fn data_errors_exit_two() {
    let dir = scratch("bad-data");
    write(&dir, "sessions.csv", "hour,y\n1,2.0\n2,3.5\n");
    let config = r#"
name = "bad_data"
seed = 1
[data]
source = "csv"
path = "sessions.csv"
[[data.columns]]
name = "hour"
role = "continuous"
quantiles = 2
[[data.columns]]
name = "duration_s"
role = "target"
[[models]]
scheme = "tmse"
transform = "log1p"
"#;
    let path = write(&dir, "bad_data.toml", config);
    let out = transun(&["experiment", "--config", &path]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("duration_s"));
}

#[test]
fn synth_writes_one_file_per_distribution() {
    let dir = scratch("synth");
    let out = transun(&["synth", "--dist", "RS-G", "--dist", "SM-U", "--n", "50", "--seed", "9", "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for id in ["RS-G", "SM-U"] {
        let text = fs::read_to_string(dir.join(format!("{id}.csv"))).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("y"));
        let ys: Vec<f64> = lines.map(|l| l.parse().unwrap()).collect();
        assert_eq!(ys.len(), 50);
        assert!(ys.iter().all(|y| y.is_finite() && *y >= 0.0));
    }
    let again = transun(&["synth", "--dist", "RS-G", "--n", "50", "--seed", "9"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), fs::read_to_string(dir.join("RS-G.csv")).unwrap());
}

#[test]
fn train_saves_parameters_and_spec() {
    let dir = scratch("train");
    let config = write(&dir, "cli_small.toml", SMALL);
    let out_dir = dir.join("model");
    let out = transun(&["train", "--config", &config, "--format", "jsonl", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let params = fs::read(out_dir.join("TranSUN_log_.params")).unwrap();
    assert!(!params.is_empty());
    let spec: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("TranSUN_log_.spec.json")).unwrap()).unwrap();
    assert!(spec.is_object());
    let row: serde_json::Value =
        serde_json::from_str(fs::read_to_string(out_dir.join("TranSUN_log_.jsonl")).unwrap().trim()).unwrap();
    assert_eq!(row["dataset"], "RS-G");
}

#[test]
fn experiment_then_report_round_trips() {
    let dir = scratch("experiment");
    let config = write(&dir, "cli_small.toml", SMALL);
    let out_dir = dir.join("out");
    let out_str = out_dir.to_str().unwrap();
    for format in ["jsonl", "md"] {
        let out = transun(&["experiment", "--config", &config, "--threads", "2", "--format", format, "--out", out_str]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let jsonl = out_dir.join("cli_small.jsonl");
    let rendered = transun(&["report", jsonl.to_str().unwrap()]);
    assert_eq!(code(&rendered), 0);
    assert_eq!(String::from_utf8(rendered.stdout).unwrap(), fs::read_to_string(out_dir.join("cli_small.md")).unwrap());

    let text = fs::read_to_string(&jsonl).unwrap();
    let rows_only: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
    let headless = write(&dir, "headless.jsonl", &rows_only);
    assert_eq!(code(&transun(&["report", &headless])), 2);
    let garbage = write(&dir, "garbage.jsonl", "{\"record\":\"nonsense\"}\n");
    assert_eq!(code(&transun(&["report", &garbage])), 2);
}

#[test]
fn oracle_table_covers_the_default_grid() {
    let out = transun(&["oracle", "--format", "csv"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("dataset,method,quantity,value,bound\n"));
    assert!(text.lines().any(|l| l.starts_with("RS-G,tmse(log1p),")), "{text}");
}
