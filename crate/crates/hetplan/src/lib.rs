//! Planning and simulation toolkit for multi-task fine-tuning on
//! heterogeneous GPU deployments.
//!
//! Given profiled costs of parallel configurations and the sequence-length
//! mix of the fine-tuning tasks, the crate
//!
//! * fits a per-configuration micro-batch time model ([`costmodel`]),
//! * proposes candidate configurations from a throughput table
//!   ([`configspace`]),
//! * picks padding-minimal sequence buckets per batch ([`bucketing`]),
//! * solves the minimax integer program that balances per-step work across
//!   replica groups ([`optimizer`]),
//! * enumerates and selects heterogeneous deployment plans ([`planner`]),
//! * dispatches each step's batch and forms micro-batch schedules
//!   ([`dispatcher`]), and
//! * estimates end-to-end GPU-seconds of whole fine-tuning strategies
//!   ([`simulator`]).
//!
//! Everything runs on the cost model alone; no GPUs are involved.

pub mod bucketing;
pub mod cli;
pub mod configspace;
pub mod costmodel;
pub mod dispatcher;
pub mod error;
pub mod fixtures;
pub mod optimizer;
pub mod planner;
pub mod simulator;
pub mod workload;

pub use error::{Error, Result};
