#![no_main]

use amafqi::PolicyTable;
use libfuzzer_sys::fuzz_target;

// First byte picks the local control count.
fuzz_target!(|data: &[u8]| {
    let Some((&first, rest)) = data.split_first() else {
        return;
    };
    let arity = 1 + (first % 4) as usize;
    if let Ok(table) = PolicyTable::read_csv(rest, arity, 1e-3) {
        let mut out = Vec::new();
        table.write_csv(&mut out).unwrap();
        let again = PolicyTable::read_csv(out.as_slice(), arity, 1e-3).unwrap();
        assert_eq!(table.entries().len(), again.entries().len());
    }
});
