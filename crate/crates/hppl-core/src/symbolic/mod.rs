//! Symbolic joint state: affine-Gaussian network, conjugate rewrites, and
//! memory reclamation.

pub mod affine;
pub mod state;

pub use affine::AffineExpr;
pub use state::{Hoisted, Marginal, Node, NodeId, Origin, SymDist, SymError, SymbolicState};
