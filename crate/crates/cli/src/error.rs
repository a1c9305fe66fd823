use hospred_core::Error as CoreError;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing {what}; run `hospred {stage}` first")]
    MissingArtifact { what: String, stage: String },
    #[error("`{stage}` was produced under a different configuration; re-run `hospred {stage}` or pass --force")]
    StaleUpstream { stage: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn missing(what: impl Into<String>, stage: impl Into<String>) -> Self {
        CliError::MissingArtifact { what: what.into(), stage: stage.into() }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    /// 0 success, 2 configuration, 3 missing artifact, 4 numerical failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::StaleUpstream { .. } => 2,
            CliError::MissingArtifact { .. } => 3,
            CliError::Io { .. } => 1,
            CliError::Core(e) => match e {
                CoreError::Config(_) | CoreError::InvalidInput(_) | CoreError::UniverseMismatch => 2,
                CoreError::Diverged { .. } | CoreError::NonFinite(_) | CoreError::SingleClass => 4,
                _ => 1,
            },
        }
    }
}
