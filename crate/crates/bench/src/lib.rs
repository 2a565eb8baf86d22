//! Shared helpers for the criterion benches in `benches/`.

use std::path::PathBuf;

use centroidal::{load_scenario, Scenario};

/// Loads a scenario from the repository corpus.
pub fn corpus(name: &str) -> Scenario {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", name].iter().collect();
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    load_scenario(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
