#![no_main]

use amafqi::TreeEnsemble;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    if let Ok(ensemble) = TreeEnsemble::from_json_str(&text) {
        let query = vec![0.5; ensemble.dim()];
        let weights = ensemble.kernel_weights(&query).unwrap();
        assert!((weights.sum() - 1.0).abs() < 1e-9);
    }
});
