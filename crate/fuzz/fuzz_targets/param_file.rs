#![no_main]

use libfuzzer_sys::fuzz_target;
use transun::regressor::ParamFile;
use transun::{RegressorSpec, Scheme, TargetTransform, TrainedRegressor};

fuzz_target!(|data: &[u8]| {
    if let Ok(file) = ParamFile::decode(data) {
        assert_eq!(ParamFile::decode(&file.encode()).as_ref(), Ok(&file));
    }
    let spec = RegressorSpec::new(Scheme::Transun, TargetTransform::Log1p);
    if let Ok(model) = TrainedRegressor::from_bytes(data, &spec) {
        assert!(model.predict(&[]).is_finite() || model.predict(&[]).is_nan());
    }
});
