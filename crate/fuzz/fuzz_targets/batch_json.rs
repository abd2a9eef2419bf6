#![no_main]

use amafqi::BatchDataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    if let Ok(batch) = BatchDataset::from_json_str(&text) {
        for l in 0..batch.len() {
            assert!(batch.joint_control(l) < batch.controls().size());
        }
        let _ = batch.distinct_states();
    }
});
