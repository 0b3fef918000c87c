use thiserror::Error;

/// Errors produced anywhere in the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {what} ({left} vs {right})")]
    Shape {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("invalid tensor train: {0}")]
    InvalidTensorTrain(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("basis conditioning failure: worst Gram deviation {worst:.3e} at ({row}, {col})")]
    Conditioning { worst: f64, row: usize, col: usize },

    #[error("capability missing: {0}")]
    Capability(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite state in simulation at path {path}, step {step}: {state:?}")]
    Simulation {
        path: usize,
        step: usize,
        state: Vec<f64>,
    },

    #[error("regression failed at time step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("finite-difference grid too coarse: Richardson difference {diff:.3e} exceeds {tol:.1e}")]
    Refinement { diff: f64, tol: f64 },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("malformed checkpoint: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::Step {
            step,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
