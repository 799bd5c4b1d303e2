#![no_main]

use libfuzzer_sys::fuzz_target;
use transun::TargetTransform;
use transun_harness::config::ColumnSpec;
use transun_harness::data::CsvTable;

fuzz_target!(|data: &[u8]| {
    let columns = [
        ColumnSpec::Categorical { name: "platform".into(), buckets: 4 },
        ColumnSpec::Continuous { name: "hour".into(), quantiles: Some(6), edges: None },
        ColumnSpec::Continuous { name: "tenure_days".into(), quantiles: None, edges: Some(vec![10.0, 100.0]) },
        ColumnSpec::Target { name: "duration_s".into() },
    ];
    let Ok(table) = CsvTable::read(data, &columns) else { return };
    let _ = table.check_domain(&TargetTransform::Log1p);
    let half: Vec<usize> = (0..table.len()).step_by(2).collect();
    let edges = table.freeze_edges(&half);
    let (dataset, features) = table.encode(&edges);
    assert_eq!(dataset.len(), table.len());
    for i in 0..dataset.len() {
        for (&index, spec) in dataset.row(i).iter().zip(&features) {
            assert!((index as usize) < spec.cardinality());
        }
    }
});
