//! Reduced-order overlapping Schwarz iteration for multiscale nonlinear
//! elliptic equations.
//!
//! The domain is split into overlapping rectangular patches. Each Schwarz
//! sweep maps the Dirichlet data of every patch to the values its solution
//! takes on the neighbours' boundaries. On interior patches that
//! boundary-to-boundary map can be replaced by a small two-layer ReLU network
//! trained offline and initialized from a truncated SVD of the linearized map.

// Range checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decomposition;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod local_solver;
pub mod problems;
pub mod sampling;
pub mod schwarz;
pub mod surrogate;

pub use error::{Error, Result};
