use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("sparse recovery failed after {iterations} iterations: {reason}")]
    Recovery { reason: String, iterations: usize },

    #[error("separation oracle has no entry for the given mixture (fingerprint {fingerprint})")]
    OracleMiss { fingerprint: String },

    #[error("error bound violated for mixture {mixture_id}: lhs {lhs} > rhs {rhs}")]
    BoundViolation { mixture_id: usize, lhs: f64, rhs: f64 },

    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: u64, reason: String },

    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: u64, reason: String },

    #[error("infeasible layer plan: {0}")]
    Planning(String),

    #[error("pipeline stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    /// Tag an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(Error::Dimension { expected, got })
    } else {
        Ok(())
    }
}
