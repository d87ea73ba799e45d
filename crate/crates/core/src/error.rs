//! Crate-wide error type and exit-code classification.

use thiserror::Error;

/// Errors produced by parsing, model construction, simulation, and solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// Expression syntax error at a byte offset of the source string.
    #[error("syntax error at offset {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    /// Identifier not bound in the current variable set.
    #[error("unknown identifier `{name}` at offset {pos}")]
    UnknownIdentifier { name: String, pos: usize },

    /// Function called with the wrong number of arguments.
    #[error("`{name}` expects {expected} argument(s), got {got} (offset {pos})")]
    Arity {
        name: String,
        expected: usize,
        got: usize,
        pos: usize,
    },

    /// Expression evaluation produced a non-finite value or left a function's domain.
    #[error("evaluation error: {0}")]
    Eval(String),

    /// Configuration file or catalog entry could not be loaded.
    #[error("config error: {0}")]
    Config(String),

    /// A caller-supplied argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// Explicit-scheme stability bound violated.
    #[error("explicit scheme unstable: dt = {dt:e} exceeds dx^2 / max(a) = {limit:e} (pass force to override)")]
    Stability { dt: f64, limit: f64 },

    /// Two discretizations do not share the nodes needed for a comparison.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// Every sampled path failed coefficient evaluation.
    #[error("no valid paths: all {0} paths hit evaluation failures")]
    NoValidPaths(usize),

    /// A solver state became NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Feller test quadrature could not be completed.
    #[error("quadrature failure: {0}")]
    Quadrature(String),

    /// Declared derivatives disagree with finite differences of the base function.
    #[error("jet self-check failed: {0}")]
    JetSelfCheck(String),

    /// ODE integration hit its step cap before detecting blow-up.
    #[error("no blow-up detected: |x| reached {reached:e} at t = {t} before the step cap")]
    NoBlowup { reached: f64, t: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Output serialization failed.
    #[error("output error: {0}")]
    Output(String),
}

/// Process exit classification for the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Usage,
    Numerical,
}

impl Error {
    /// Maps an error to the CLI exit class (usage -> 1, numerical -> 2).
    pub fn exit_class(&self) -> ExitClass {
        match self {
            Error::Syntax { .. }
            | Error::UnknownIdentifier { .. }
            | Error::Arity { .. }
            | Error::Config(_)
            | Error::Invalid(_)
            | Error::GridMismatch(_)
            | Error::Io(_) => ExitClass::Usage,
            Error::Eval(_)
            | Error::Stability { .. }
            | Error::NoValidPaths(_)
            | Error::NonFinite(_)
            | Error::Quadrature(_)
            | Error::JetSelfCheck(_)
            | Error::NoBlowup { .. }
            | Error::Output(_) => ExitClass::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
