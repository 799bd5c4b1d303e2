use std::fs;
use std::path::{Path, PathBuf};

use transun_harness::config::DataSource;
use transun_harness::{ConfigError, ExperimentConfig};

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn committed() -> Vec<PathBuf> {
    let mut paths: Vec<PathBuf> = fs::read_dir(config_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths
}

#[test]
fn every_committed_config_loads() {
    let paths = committed();
    assert!(paths.len() >= 8, "{paths:?}");
    for path in paths {
        let config = ExperimentConfig::from_path(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        config.validate().unwrap();
        assert_eq!(config.name, path.file_stem().unwrap().to_str().unwrap());
        if let DataSource::Csv { path: csv, .. } = &config.data {
            assert!(csv.exists(), "{} points at missing {}", config.name, csv.display());
        }
    }
}

#[test]
fn hash_ignores_formatting_but_not_values() {
    let text = fs::read_to_string(config_dir().join("table1.toml")).unwrap();
    let a = ExperimentConfig::from_toml_str(&text).unwrap();
    let reformatted = format!("# leading comment\n\n{}", text.replace(" = ", "="));
    let b = ExperimentConfig::from_toml_str(&reformatted).unwrap();
    assert_eq!(a.hash(), b.hash());
    let c = ExperimentConfig::from_toml_str(&text.replace("seed = 1", "seed = 2")).unwrap();
    assert_ne!(a.hash(), c.hash());
}

#[test]
fn typos_are_rejected() {
    let text = fs::read_to_string(config_dir().join("table1.toml")).unwrap();
    let bad = text.replace("replicates = 10", "replicate = 10");
    assert!(matches!(ExperimentConfig::from_toml_str(&bad), Err(ConfigError::Parse(_))));
}

#[test]
fn features_come_from_the_data() {
    let text = r#"
name = "x"
seed = 1
[data]
source = "synthetic"
distributions = ["RS-G"]
n = 100
[[models]]
scheme = "tmse"
transform = "log1p"
architecture = { features = [{ kind = "hashed_categorical", buckets = 4 }] }
"#;
    assert!(matches!(ExperimentConfig::from_toml_str(text), Err(ConfigError::Model { .. })));
}
