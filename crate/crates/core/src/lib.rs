//! Distributed cooperative spectrum sensing with overlapping and
//! non-overlapping coalition formation.
//!
//! The crate is layered bottom-up: Gaussian tail helpers ([`math`]), the
//! energy detector and per-size utility tables ([`sensing`]), SU placement
//! and reporting budgets ([`network`]), the two formation engines ([`ocf`],
//! [`cf`]), realized-performance evaluation ([`evaluator`]) and the
//! Monte-Carlo driver ([`experiment`]).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cf;
pub mod error;
pub mod evaluator;
pub mod experiment;
pub mod math;
pub mod network;
pub mod ocf;
pub mod sensing;
pub mod trace;

pub use cf::{merge_feasible, run_merge_formation, Partition};
pub use error::{Error, Result};
pub use evaluator::{
    network_metrics, realized_su_metrics, NetworkMetrics, StructureRef, SuMetrics,
};
pub use experiment::{
    emit, run_experiment, Algorithm, ExperimentConfig, OutputFormat, ResultRow, Sweep, SweepParam,
};
pub use math::{Probability, Tolerance};
pub use network::{generate_scenario, NetworkConfig, ResourceLedger, Scenario, SuId};
pub use ocf::{run_formation, OverlapStructure};
pub use sensing::{Criterion, SensingParams, TableCache, UtilityTable};
pub use trace::{EventKind, RunTrace, TraceEvent};
