//! Static certification: which annotated variables keep closed-form
//! posteriors, and whether a program's symbolic state stays bounded as the
//! data grows.

pub mod absdom;
pub mod division;
pub mod fuzz;
pub mod memory;

pub use division::{analyze_division, DivisionReport, ExactReport, SiteVerdict};
pub use fuzz::{run_fuzz, FuzzConfig, FuzzReport};
pub use memory::{analyze_memory, MemConfig, MemoryVerdict};
