//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// Expression syntax error. Display matches the documented format
    /// `error at offset N: <message>`.
    #[error("error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// A variable name in an expression has no slot and is not a parameter.
    #[error("unbound variable '{0}'")]
    UnboundVariable(String),

    /// Evaluation left the domain of an operation; carries the offending value.
    #[error("division by zero (numerator {0})")]
    DivisionByZero(f64),
    #[error("log of non-positive value {0}")]
    LogDomain(f64),
    #[error("sqrt of negative value {0}")]
    SqrtDomain(f64),
    #[error("pow domain violation: base {base}, exponent {exponent}")]
    PowDomain { base: f64, exponent: f64 },
    #[error("tan singular at {0}")]
    TanDomain(f64),

    /// Evaluation produced a NaN or infinity.
    #[error("non-finite result in {context}")]
    NonFinite { context: String },

    /// Model file or builder input violates the schema.
    #[error("schema error: {0}")]
    Schema(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown builtin model '{0}'")]
    UnknownBuiltin(String),

    /// Velocity Hessian is numerically singular at the evaluation point.
    #[error("singular velocity Hessian (reciprocal condition {rcond:.3e})")]
    SingularHessian { rcond: f64 },

    /// Constraint forms do not have full rank m.
    #[error("constraint forms rank-deficient: rank {rank} < {expected}")]
    RankDeficient { rank: usize, expected: usize },

    /// The compatibility matrix is singular; the projector does not exist here.
    #[error("incompatible point: compatibility matrix ill-conditioned (reciprocal condition {rcond:.3e})")]
    Incompatible { rcond: f64 },

    /// A linear system arising in a solve is singular.
    #[error("singular linear system in {context} (reciprocal condition {rcond:.3e})")]
    SingularSystem { context: String, rcond: f64 },

    /// Newton iteration failed to converge.
    #[error("{context}: no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        context: String,
        iterations: usize,
        residual: f64,
    },

    /// A point violates the constraint functions beyond the feasibility tolerance.
    #[error("point off the constraint submanifold: max |phi| = {max_phi:.3e} > {tol:.3e}")]
    OffManifold { max_phi: f64, tol: f64 },

    /// Two routes to the same quantity disagree beyond tolerance.
    #[error("internal cross-check failed in {context}: difference {difference:.3e}")]
    Inconsistent { context: String, difference: f64 },

    /// Simulation configuration rejected.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Time integration aborted mid-run.
    #[error("integration aborted at t = {time}: {reason}")]
    Aborted { time: f64, reason: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
