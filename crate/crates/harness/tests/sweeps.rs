use std::path::Path;

use transun_harness::{run_experiment, ExperimentConfig};

#[test]
fn epsilon_extremes_do_worse_on_featured_data() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/epsilon_sweep_csv.toml");
    let report = run_experiment(&ExperimentConfig::from_path(&path).unwrap()).unwrap();
    let tre = |eps: f64| report.aggregate_for("csv", "TranSUN(log)", Some(eps), "tre").unwrap().mean;
    let middle = [0.01, 0.1, 1.0].map(tre).into_iter().fold(0.0, f64::max);
    for eps in [1e-4, 100.0] {
        assert!(tre(eps) > middle, "epsilon {eps}: {} vs {middle}", tre(eps));
    }
}
