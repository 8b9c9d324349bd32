//! Experiment runner: reads an experiment file, solves every sweep point,
//! seed and method, and writes CSV tables plus plot-ready aggregates.

pub mod plot;
pub mod runner;
pub mod spec;

pub use runner::{run, run_spec, RunOptions, RunSummary};
pub use spec::{ExperimentSpec, MethodKind};
