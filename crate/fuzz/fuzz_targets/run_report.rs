#![no_main]

use libfuzzer_sys::fuzz_target;
use transun_harness::{Format, RunReport};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(report) = RunReport::from_jsonl(text) {
        for format in [Format::Csv, Format::Markdown, Format::JsonLines] {
            let _ = report.render(format);
        }
    }
});
