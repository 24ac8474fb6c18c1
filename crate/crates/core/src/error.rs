use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinates outside the potential's domain: {0}")]
    Domain(String),

    #[error("trajectory blew up at step {step} (coordinate {value}); reduce dt")]
    BlowUp { step: usize, value: f64 },

    #[error("invalid specification: {0}")]
    Spec(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("lag {lag} needs at least {} frames, shortest trajectory has {frames}", lag + 1)]
    Lag { lag: usize, frames: usize },

    #[error("feature column {column} ({name}) has zero variance")]
    DegenerateFeature { column: usize, name: String },

    #[error("C00 + eps*I is not positive definite (smallest eigenvalue {min_eigenvalue:e}); increase the shrinkage")]
    Conditioning { min_eigenvalue: f64 },

    #[error("sparse tICA component {component} collapsed to zero under penalty {penalty}")]
    OverPenalized { component: usize, penalty: f64 },

    #[error("training diverged at epoch {epoch} (learning rate {lr})")]
    Divergence { epoch: usize, lr: f64 },

    #[error("cannot compile pipeline: {0}")]
    Compile(String),

    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown identifier `{name}` at line {line}, column {column}")]
    UnknownIdentifier {
        name: String,
        line: usize,
        column: usize,
    },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::BlowUp { .. }
                | Error::Conditioning { .. }
                | Error::OverPenalized { .. }
                | Error::Divergence { .. }
                | Error::NonConvergence { .. }
        )
    }
}
