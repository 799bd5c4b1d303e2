use std::fs;
use std::path::{Path, PathBuf};

use transun::regressor::ParamFile;
use transun_harness::config::ColumnSpec;
use transun_harness::data::CsvTable;
use transun_harness::{ExperimentConfig, RunReport};

fn seeds(target: &str) -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut paths: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    assert!(!paths.is_empty(), "no seeds for {target}");
    paths
}

#[test]
fn config_seeds_parse() {
    for path in seeds("config_parser") {
        let text = fs::read_to_string(&path).unwrap();
        ExperimentConfig::from_toml_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn report_seeds_parse() {
    for path in seeds("run_report") {
        let text = fs::read_to_string(&path).unwrap();
        let report = RunReport::from_jsonl(&text).unwrap();
        assert_eq!(report.to_jsonl(), text);
    }
}

#[test]
fn param_seeds_cover_good_and_bad_input() {
    let decoded: Vec<bool> = seeds("param_file").iter().map(|p| ParamFile::decode(&fs::read(p).unwrap()).is_ok()).collect();
    assert!(decoded.contains(&true) && decoded.contains(&false), "{decoded:?}");
}

#[test]
fn csv_seeds_cover_good_and_bad_input() {
    let columns = [
        ColumnSpec::Categorical { name: "platform".into(), buckets: 4 },
        ColumnSpec::Continuous { name: "hour".into(), quantiles: Some(6), edges: None },
        ColumnSpec::Continuous { name: "tenure_days".into(), quantiles: None, edges: Some(vec![10.0, 100.0]) },
        ColumnSpec::Target { name: "duration_s".into() },
    ];
    let read: Vec<bool> =
        seeds("csv_loader").iter().map(|p| CsvTable::read(fs::read(p).unwrap().as_slice(), &columns).is_ok()).collect();
    assert!(read.contains(&true) && read.contains(&false), "{read:?}");
}
