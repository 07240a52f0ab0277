use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergent { epoch: usize },

    #[error("non-finite bounds during set propagation at layer {layer}")]
    NonFiniteBounds { layer: usize },

    #[error("infeasible configuration: {reason}")]
    Infeasible {
        reason: String,
        /// Smallest calibration size that would make the request feasible, when one exists.
        min_calibration: Option<usize>,
    },

    #[error("insufficient calibration data: conformal quantile is +inf")]
    InsufficientCalibration,

    #[error("bisection did not converge (residual {residual:e})")]
    NoConvergence { residual: f64 },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            got,
        }
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 2: infeasible configuration, 3: numeric failure, 4: I/O, 1: anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::Infeasible { .. } | Error::InsufficientCalibration => 2,
            Error::NonFiniteState { .. }
            | Error::Divergent { .. }
            | Error::NonFiniteBounds { .. }
            | Error::NoConvergence { .. } => 3,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => 4,
            Error::DimensionMismatch { .. } | Error::InvalidArgument(_) => 1,
        }
    }
}
