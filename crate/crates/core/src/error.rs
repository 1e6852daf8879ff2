use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("layer {layer} fully pruned")]
    LayerFullyPruned { layer: usize },

    #[error("degenerate layer {layer}: every kernel is zero")]
    DegenerateLayer { layer: usize },

    #[error("loss diverged at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("corrupt batch: {0}")]
    CorruptBatch(String),

    #[error("bad magic: {0}")]
    BadMagic(String),

    #[error("format version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    /// True for errors caused by unreadable or inconsistent input files.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::CorruptBatch(_)
                | Error::BadMagic(_)
                | Error::VersionMismatch { .. }
                | Error::Truncated(_)
                | Error::Format(_)
                | Error::Invariant(_)
                | Error::LabelOutOfRange { .. }
                | Error::Io(_)
        )
    }
}
