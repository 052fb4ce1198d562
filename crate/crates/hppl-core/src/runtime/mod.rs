//! Sampling runtime: data tables, the particle executor, resampling, and
//! result types.

pub mod data;
pub mod engine;
pub mod resample;
pub mod results;
pub mod rng;

pub use data::{DataError, DataTable};
pub use engine::{enumerate, run, Chooser, EngineKind, OracleResult, RngChooser, RunConfig};
pub use results::{
    Component, Diagnostics, InferError, Posterior, RunResult, SampledVar, Violation,
    ViolationKind, WeightedComponent,
};
