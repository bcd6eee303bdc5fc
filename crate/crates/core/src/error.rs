use std::path::PathBuf;

use crate::hierarchy::{TaskId, Violation};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: {dimension} expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        dimension: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("class index {index} out of range for {classes} classes")]
    LabelOutOfRange { index: usize, classes: usize },

    #[error("invalid hierarchy schema: {}", format_violations(.0))]
    Schema(Vec<Violation>),

    #[error("unknown task {0}")]
    UnknownTask(TaskId),

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("inference reached label `{label}` of task {task}, which is neither terminal nor a registered dependency")]
    SchemaIntegrity { task: TaskId, label: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("training diverged at epoch {epoch}, sample {sample}: loss is {loss}")]
    Divergence { epoch: usize, sample: usize, loss: f32 },

    #[error("model file: {0}")]
    Format(String),

    #[error("data: {0}")]
    Data(String),

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}
