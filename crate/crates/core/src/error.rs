use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, BattraeError>;

#[derive(Debug, Error)]
pub enum BattraeError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    Dimension {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("negative sampling failed: {0}")]
    Sampling(String),

    #[error("non-finite value during {stage}")]
    Numeric { stage: String },

    #[error("model file field `{field}`: {reason}")]
    ModelFile { field: String, reason: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<BattraeError>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl BattraeError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        BattraeError::Shape(msg.into())
    }

    pub(crate) fn numeric(stage: impl Into<String>) -> Self {
        BattraeError::Numeric {
            stage: stage.into(),
        }
    }

    pub(crate) fn model_file(field: impl Into<String>, reason: impl Into<String>) -> Self {
        BattraeError::ModelFile {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BattraeError::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        BattraeError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit status for this error: 2 for data problems, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            BattraeError::Numeric { .. } => 3,
            BattraeError::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

/// Attaches a stage name to the error of a `Result`.
pub trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
