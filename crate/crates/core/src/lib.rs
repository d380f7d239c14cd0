//! Agent-based simulation of wealth accumulation under random returns.
//!
//! A population of agents starts with equal wealth and receives an independent
//! random return every period. [`dynamics`] advances the population under
//! compound, simple, aggregate-dampened or two-factor (capital plus saved
//! labour income) accumulation; [`fiscal`] levies a tax on positive wealth
//! changes and hands it back; [`metrics`] measures inequality and mobility;
//! [`harness`] runs replication ensembles, parameter sweeps and rank-persistence
//! studies and writes CSV output.

pub mod dynamics;
pub mod error;
pub mod fiscal;
pub mod harness;
pub mod metrics;
pub mod returns;

pub use dynamics::{PopulationState, ProcessKind, SavingPolicy};
pub use error::{Error, Result};
pub use fiscal::{FiscalRecord, LevyMode, Redistribution, TaxPolicy};
pub use harness::{
    named_scenario, run_experiment, run_persistence, run_scenario, run_sweep, write_outputs,
    EnsembleResult, ExperimentConfig, Manifest, Outputs, Scenario,
};
pub use returns::ReturnSpec;
