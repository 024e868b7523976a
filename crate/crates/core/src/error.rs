use std::path::PathBuf;

/// Errors produced anywhere in the ticket pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch at layer {layer}: expected {expected}, got {actual}")]
    LayerShape {
        layer: usize,
        expected: String,
        actual: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("subset {0} is empty")]
    EmptySubset(usize),

    #[error("cannot prune {requested} weights: only {available} survive")]
    PruneExceedsSurvivors { requested: usize, available: usize },

    #[error("label {0} has no subset mapping")]
    UnmappedLabel(usize),

    #[error("no mask routed for subset {0}")]
    UnroutedSubset(usize),

    #[error("malformed pixmap: {0}")]
    Pixmap(String),

    #[error("{what}: unsupported format version {found} (expected {expected})")]
    Version {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
