use std::fs;
use std::path::{Path, PathBuf};

use amafqi::{BatchDataset, MdpSpec, PolicyTable, TreeEnsemble};
use amafqi_bench::{ExperimentConfig, ModelBundle};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out.sort();
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

/// Every checked-in fuzz seed is a valid input for its target.
#[test]
fn fuzz_seeds_parse() {
    for (p, b) in seeds("mdp_spec_json") {
        MdpSpec::from_json_str(text(&b)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("batch_json") {
        BatchDataset::from_json_str(text(&b)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("batch_csv") {
        let n_states = 1 + (b[0] % 8) as usize;
        let arity = 1 + (b[1] % 4) as usize;
        BatchDataset::read_csv(&b[2..], n_states, arity).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("policy_csv") {
        let arity = 1 + (b[0] % 4) as usize;
        PolicyTable::read_csv(&b[1..], arity, 1e-3).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("ensemble_json") {
        TreeEnsemble::from_json_str(text(&b)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("config_json") {
        ExperimentConfig::from_json_str(text(&b)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("model_bundle_json") {
        ModelBundle::from_json_str(text(&b)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}
