#![no_main]

use amafqi_bench::ModelBundle;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    if let Ok(bundle) = ModelBundle::from_json_str(&text) {
        for x in 0..bundle.n_states.min(64) {
            let _ = bundle.act(x);
        }
    }
});
