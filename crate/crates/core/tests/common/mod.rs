//! Small planted cells shared by the integration tests.
#![allow(dead_code)]

use std::sync::OnceLock;

use eeg_audit::harness::{generate_planted, PlantedCell, PlantedSpec};

pub fn small_spec(seed: u64, model: &str) -> PlantedSpec {
    PlantedSpec {
        seed,
        model: model.into(),
        n_train: 300,
        n_val: 100,
        n_test: 100,
        n_used: 4,
        n_enc: 4,
        ..PlantedSpec::default()
    }
}

pub fn planted() -> &'static PlantedCell {
    static CELL: OnceLock<PlantedCell> = OnceLock::new();
    CELL.get_or_init(|| generate_planted(&small_spec(77, "linear")).expect("planted cell"))
}

pub fn second() -> &'static PlantedCell {
    static CELL: OnceLock<PlantedCell> = OnceLock::new();
    CELL.get_or_init(|| generate_planted(&small_spec(78, "linear-b")).expect("planted cell"))
}
