#![no_main]

use amafqi::MdpSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    if let Ok(spec) = MdpSpec::from_json_str(&text) {
        // anything accepted must serialize back to an equal spec
        let again = MdpSpec::from_json_str(&spec.to_json().unwrap()).unwrap();
        assert_eq!(spec, again);
    }
});
