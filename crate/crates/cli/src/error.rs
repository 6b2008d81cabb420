use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Engine(#[from] ucodec_core::Error),
    #[error("wav {field}: {detail}")]
    Wav { field: &'static str, detail: String },
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), source }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        use ucodec_core::Error as E;
        match self {
            CliError::Engine(E::CorruptStream(_) | E::Format(_)) | CliError::Wav { .. } => 3,
            CliError::Engine(E::Compatibility(_)) | CliError::Config(_) | CliError::Engine(E::Config(_)) => 4,
            CliError::Checkpoint(_) => 5,
            CliError::Io { .. } => 6,
            _ => 1,
        }
    }
}
