use thiserror::Error;

pub type Result<T> = std::result::Result<T, PdaError>;

#[derive(Debug, Error)]
pub enum PdaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate vector: {0}")]
    Degenerate(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("evaluation unavailable: {0}")]
    EvaluationUnavailable(String),

    #[error("{phase} phase failed: {source}")]
    Phase {
        phase: &'static str,
        #[source]
        source: Box<PdaError>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl PdaError {
    /// Wraps an error with the name of the experiment phase it came from.
    pub fn in_phase(self, phase: &'static str) -> Self {
        match self {
            already @ PdaError::Phase { .. } => already,
            other => PdaError::Phase {
                phase,
                source: Box::new(other),
            },
        }
    }

    /// Process exit code: 2 config, 3 numeric, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            PdaError::InvalidInput(_)
            | PdaError::Shape(_)
            | PdaError::Config(_)
            | PdaError::Precondition(_)
            | PdaError::EvaluationUnavailable(_) => 2,
            PdaError::Degenerate(_) | PdaError::Numeric(_) | PdaError::Diverged { .. } => 3,
            PdaError::Parse { .. } | PdaError::Io(_) => 4,
            PdaError::Phase { source, .. } => source.exit_code(),
        }
    }
}

impl From<serde_json::Error> for PdaError {
    fn from(err: serde_json::Error) -> Self {
        PdaError::Config(err.to_string())
    }
}
