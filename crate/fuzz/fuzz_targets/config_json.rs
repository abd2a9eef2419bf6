#![no_main]

use amafqi_bench::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    let _ = ExperimentConfig::from_json_str(&text);
});
