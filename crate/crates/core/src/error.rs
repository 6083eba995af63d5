use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("non-finite model evaluation at {what}")]
    Evaluation { what: String },

    #[error("integration failed at t = {reached}: step size underflow")]
    Integration { reached: f64 },

    #[error("tangent frame lost rank at t = {time}")]
    Degenerate { time: f64 },

    #[error("conjugate point at t = {time}")]
    ConjugatePoint { time: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular point: {0}")]
    Singular(String),

    #[error("velocity bound search exceeded cap {cap}")]
    Unbounded { cap: f64 },

    #[error("alpha estimate did not stabilise after {iters} steps (last bracket [{lo}, {hi}])")]
    Estimation { iters: usize, lo: f64, hi: f64 },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("alpha mismatch: normalized iterates drift at rate {drift} per unit time")]
    AlphaMismatch { drift: f64 },

    #[error("u is not differentiable at {q:?} (one-sided slopes {forward:?} vs {backward:?})")]
    NonDifferentiable {
        q: Vec<f64>,
        forward: Vec<f64>,
        backward: Vec<f64>,
    },

    #[error("property violation: {0}")]
    Property(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Property(_) => 1,
            Error::Input(_) | Error::Domain(_) | Error::Config { .. } | Error::Parse { .. } | Error::Io(_) => 2,
            _ => 3,
        }
    }
}
