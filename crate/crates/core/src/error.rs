//! Error type shared by every module of the crate.

use thiserror::Error;

use crate::fed::RoundTrace;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong when building operators, running simulations
/// or evaluating bounds.
#[derive(Debug, Error)]
pub enum Error {
    /// A sketch specification violates its structural invariants.
    #[error("invalid sketch spec: {0}")]
    InvalidSpec(String),

    /// A vector or matrix has the wrong length.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The requested quantity is not defined for this input.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A numeric parameter lies outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// A client or sample index is out of range.
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    /// A linear system has no unique solution.
    #[error("singular system: {0}")]
    SingularSystem(String),

    /// The simulation produced a non-finite coordinate. The trace recorded up
    /// to that point is attached.
    #[error("non-finite value encountered at round {round}")]
    NonFinite {
        round: usize,
        trace: Box<RoundTrace>,
    },

    /// A non-finite value appeared outside a federated run.
    #[error("non-finite value encountered at step {step}")]
    NonFiniteStep { step: usize },

    /// Aggregation was asked to average zero client messages.
    #[error("empty client list")]
    EmptyClientList,

    /// Composition was asked to combine zero budgets.
    #[error("empty list")]
    EmptyList,

    /// A client cannot provide a bound on its per-sample gradient norm.
    #[error("client {0} has no Lipschitz bound (declare a parameter ball)")]
    NoLipschitzBound(usize),

    /// A theorem hypothesis on the step size or privacy level fails.
    #[error("guard violated: {0}")]
    GuardViolated(String),

    /// The constants supplied to a convergence rule do not satisfy its
    /// hypothesis.
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    /// The transpose of a sketch operator has a vanishing singular value.
    #[error("rank deficient sketch: smallest singular value {gamma1:e}")]
    RankDeficient { gamma1: f64 },
}
