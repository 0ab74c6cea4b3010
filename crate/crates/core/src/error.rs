use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum CaiError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("enumeration needs {required} entries but the cap is {cap} (raise CAI_MAX_ENUM)")]
    ResourceLimit { required: u128, cap: u128 },

    #[error("non-finite value at step {t}, state {state}: {what}")]
    NumericOverflow { t: usize, state: usize, what: String },

    #[error("all weights are zero")]
    DegenerateWeights,

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("training diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        /// JSON of the last parameters that produced a finite objective.
        checkpoint: Box<serde_json::Value>,
    },

    #[error("validation: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CaiError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CaiError::InvalidInput(msg.into())
    }

    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            CaiError::InvalidInput(_) | CaiError::Validation(_) | CaiError::Json(_) => 2,
            CaiError::NumericOverflow { .. }
            | CaiError::DegenerateWeights
            | CaiError::Numeric(_)
            | CaiError::Diverged { .. } => 3,
            CaiError::ResourceLimit { .. } => 4,
            CaiError::Io(_) => 1,
        }
    }
}

pub type Result<T, E = CaiError> = std::result::Result<T, E>;
