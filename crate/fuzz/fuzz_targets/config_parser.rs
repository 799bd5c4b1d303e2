#![no_main]

use libfuzzer_sys::fuzz_target;
use transun_harness::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = ExperimentConfig::from_toml_str(text) {
        // anything that parses must validate and hash without panicking
        config.validate().expect("parsed configs are valid");
        let _ = config.hash();
        let _ = config.sweep_points();
    }
});
