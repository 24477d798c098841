/// Errors raised by the numerical core.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("index {index} out of range (length {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("requested rank {requested} exceeds the attainable numerical rank {attainable}")]
    RankDeficient { requested: usize, attainable: usize },
    #[error("Newton iteration did not converge after {iterations} iterations (residual norm {residual:e})")]
    NewtonDivergence { iterations: usize, residual: f64 },
    #[error("time step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("basis certification failed: {0}")]
    Certification(String),
    #[error("reference trajectory has zero norm")]
    ZeroReference,
    #[error("adaptation failed at time step {step}: {source}")]
    Adaptation {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dims(context: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            got,
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::Step {
            step,
            source: Box::new(self),
        }
    }
}
