use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate element {element}: {reason}")]
    DegenerateElement { element: usize, reason: String },

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("simulation diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    /// A time step failed; `step` is the index of the state being computed.
    #[error("step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sparse factorization failed: {0}")]
    Factorization(String),

    #[error("singular step system at step {step}")]
    SingularStep { step: usize },

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("optimization failed: {reason}")]
    Optimization {
        reason: String,
        history: Box<crate::calibrate::History>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// True when the failure stems from a blown-up simulation, either directly
    /// or wrapped in a step error.
    pub fn is_divergence(&self) -> bool {
        match self {
            Error::Divergence { .. } => true,
            Error::Step { source, .. } => source.is_divergence(),
            _ => false,
        }
    }
}
