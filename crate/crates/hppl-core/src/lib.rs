//! Hybrid probabilistic inference with symbolic marginalization, plus static
//! verifiers for exactness and memory-boundedness of the symbolic runtime.

pub mod lang;
pub mod report;
pub mod runtime;
pub mod symbolic;
pub mod verify;
