//! Error type shared by every module of the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while building chains or evaluating the
/// dissipation calculus. Numeric payloads are widened to `f64` so the enum
/// stays independent of the working scalar type.
#[derive(Debug, Error)]
pub enum Error {
    /// A rate κ(x,y) with x ≠ y was negative.
    #[error("negative off-diagonal rate {value:e} at ({row}, {col})")]
    NegativeOffDiagonal { row: usize, col: usize, value: f64 },

    /// A generator row summed to something beyond the ingest tolerance.
    #[error("row {row} of the rate matrix sums to {sum:e}, not 0")]
    RowSumNonzero { row: usize, sum: f64 },

    /// The positive-rate digraph is not strongly connected.
    #[error("rate matrix is reducible: the positive-rate digraph is not strongly connected")]
    Reducible,

    /// Malformed matrix or vector shape.
    #[error("shape error: {0}")]
    Shape(String),

    /// A linear solve failed beyond the expected rank-1 kernel.
    #[error("linear solve failed: {0}")]
    SolveFailed(String),

    /// Transition semigroup queried at t < 0.
    #[error("transition matrix requested at negative time")]
    NegativeTime,

    /// Argument of Φ, Θ or a Bregman divergence must be strictly positive.
    #[error("argument must be strictly positive")]
    NonpositiveArgument,

    /// Operation requires an interior likelihood vector (all entries > 0).
    #[error("likelihood vector has a zero entry; operation requires the interior of the manifold")]
    BoundaryLikelihood,

    /// Boundary probability vector fed to an entropy that diverges at 0.
    #[error("boundary probability vector is not supported for this entropy")]
    BoundaryUnsupported,

    /// Input function must have zero mean under Q.
    #[error("function must have zero mean under the invariant distribution")]
    NonzeroMean,

    /// Operation is only defined under detailed balance.
    #[error("operation requires detailed balance (max violation {violation:e})")]
    DetailedBalanceRequired { violation: f64 },

    /// Symmetric eigensolver did not converge.
    #[error("eigenvalue computation failed: {0}")]
    EigenFailed(String),

    /// Numerical optimizer did not reach its stationarity tolerance.
    #[error("optimization failed: {0}")]
    OptFailed(String),

    /// Constrained problem admits no feasible point.
    #[error("infeasible problem: {0}")]
    Infeasible(String),

    /// Path reversal called with a horizon different from the path's.
    #[error("path horizon does not match the requested reversal horizon")]
    HorizonMismatch,

    /// Tangent vector violates its continuity-equation invariants.
    #[error("invalid tangent: {0}")]
    BadTangent(String),

    /// Chain-spec file violates the ingest contract.
    #[error("chain spec error: {0}")]
    ChainSpec(String),

    /// Catch-all for precondition violations on operation arguments.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
