use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric divergence: {0}")]
    Divergence(String),

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    /// A logistic fit whose data cannot locate a transition.
    #[error("degenerate fit: {0}; widen the delta grid")]
    DegenerateFit(String),

    #[error(transparent)]
    Core(sc_amp::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<sc_amp::Error> for HarnessError {
    fn from(e: sc_amp::Error) -> Self {
        match e {
            sc_amp::Error::Divergence { .. } => HarnessError::Divergence(e.to_string()),
            other => HarnessError::Core(other),
        }
    }
}

impl HarnessError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit status: 2 for bad input, 3 for numeric divergence,
    /// 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::DegenerateFit(_) => 2,
            HarnessError::Core(e) if is_input_error(e) => 2,
            HarnessError::Divergence(_) => 3,
            _ => 1,
        }
    }
}

fn is_input_error(e: &sc_amp::Error) -> bool {
    use sc_amp::Error::*;
    matches!(e, Domain { .. } | InvalidPrior(_) | UnknownShape(_) | Precondition(_) | Dimension(_))
}
