//! Loaders for the bundled desk-scale fixtures (profiled throughput table,
//! synthesized profiling samples, reference workloads). Used by the test
//! suites and handy from the CLI/README examples.

use std::path::PathBuf;

use crate::configspace::ThroughputTable;
use crate::costmodel::{self, CostProfile, ProfilingSample};
use crate::error::Result;

pub fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn path(name: &str) -> PathBuf {
    dir().join(name)
}

/// The profiled throughput table (tokens/GPU/s per config and length).
pub fn throughput_table() -> ThroughputTable {
    ThroughputTable::read_csv(&path("throughput_table.csv")).expect("bundled table parses")
}

/// Synthesized micro-batch profiling samples consistent with the table.
pub fn profiling_samples() -> Vec<ProfilingSample> {
    costmodel::read_samples_csv(&path("profiling_samples.csv")).expect("bundled samples parse")
}

/// Cost profile fitted from the bundled samples.
pub fn cost_profile() -> CostProfile {
    costmodel::fit_cost_curve(&profiling_samples()).expect("bundled samples fit")
}

/// The four-config profile used by the 16-GPU reference scenario
/// (tp-only configs with supported ranges 1..4 on a 2k/4k/8k/16k grid).
pub fn reference_profile() -> Result<CostProfile> {
    let full = cost_profile();
    let keep: Vec<_> = full
        .configs()
        .into_iter()
        .filter(|c| c.pp_stages == 1 && matches!(c.tp_degree, 1 | 2 | 4 | 8))
        .collect();
    full.restrict(&keep)
}
