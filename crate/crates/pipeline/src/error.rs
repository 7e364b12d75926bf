use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("{stage}: non-finite value at step {step}: {detail}")]
    Numeric { stage: String, step: u64, detail: String },
    #[error("reconstruction of {sequence} failed: {detail}")]
    Reconstruction { sequence: String, detail: String },
    #[error("missing {what}: {}", path.display())]
    Missing { what: &'static str, path: PathBuf },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] vecset4d::Error),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

impl PipelineError {
    /// Process exit code: 2 for validation problems, 3 for numeric failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Validation(_) | Self::Missing { .. } => 2,
            Self::Numeric { .. } | Self::Reconstruction { .. } => 3,
            Self::Core(vecset4d::Error::NonFinite { .. }) => 3,
            Self::Core(
                vecset4d::Error::InvalidArgument(_)
                | vecset4d::Error::InvalidMesh(_)
                | vecset4d::Error::ShapeMismatch { .. }
                | vecset4d::Error::Format(_),
            ) => 2,
            Self::Io { .. } | Self::Core(_) => 1,
        }
    }
}

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| PipelineError::Io { path: path.into(), source })
    }
}
