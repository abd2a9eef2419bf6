#![no_main]

use amafqi::BatchDataset;
use libfuzzer_sys::fuzz_target;

// First two bytes pick the state count and local control count.
fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let n_states = 1 + (data[0] % 8) as usize;
    let arity = 1 + (data[1] % 4) as usize;
    if let Ok(batch) = BatchDataset::read_csv(&data[2..], n_states, arity) {
        let mut out = Vec::new();
        batch.write_csv(&mut out).unwrap();
        let again = BatchDataset::read_csv(out.as_slice(), n_states, arity).unwrap();
        assert_eq!(batch.len(), again.len());
    }
});
