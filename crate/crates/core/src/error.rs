use thiserror::Error;

/// Errors raised anywhere in the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid alignment: {0}")]
    Alignment(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("unknown boundary condition {index} for {problem}")]
    UnknownBoundaryCondition { problem: String, index: usize },

    #[error("{solver} did not converge in {iterations} iterations (last residual {residual:e})")]
    IterationLimit { solver: &'static str, iterations: usize, residual: f64 },

    #[error("line search failed after {iterations} iterations (step underflow)")]
    Descent { iterations: usize },

    #[error("linear algebra: {0}")]
    LinearAlgebra(String),

    #[error("topology: patch {from:?} is not a neighbor of {to:?}")]
    Topology { from: (usize, usize), to: (usize, usize) },

    #[error("boundary node {node} of patch {patch:?} is not covered by any neighbor")]
    Coverage { patch: (usize, usize), node: usize },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("zero operator: no singular value above the truncation threshold")]
    ZeroRank,

    #[error("configuration: {0}")]
    Config(String),

    #[error("Schwarz iteration did not converge in {iterations} iterations (res {residual:e})")]
    SchwarzNonConvergence { iterations: usize, residual: f64, history: Vec<f64> },
}

pub type Result<T> = std::result::Result<T, Error>;
