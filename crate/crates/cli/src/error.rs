use patchrep::bpe::BpeError;
use patchrep::config::ConfigError;
use patchrep::heads::HeadError;
use patchrep::metrics::MetricError;
use patchrep::pipeline::PipelineError;
use patchrep::tensor::TensorError;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    MissingConfigKey(String),
    #[error("{0}")]
    InvalidConfig(String),
    #[error("{0}")]
    FileNotFound(String),
    #[error("{0}")]
    CheckpointMismatch(String),
    #[error("{0}")]
    BadRecord(String),
    #[error("{0}")]
    NoRecords(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Model(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::MissingConfigKey(_) => "MissingConfigKey",
            CliError::InvalidConfig(_) => "InvalidConfig",
            CliError::FileNotFound(_) => "FileNotFound",
            CliError::CheckpointMismatch(_) => "CheckpointMismatch",
            CliError::BadRecord(_) => "BadRecord",
            CliError::NoRecords(_) => "NoRecords",
            CliError::Io(_) => "Io",
            CliError::Model(_) => "Model",
        }
    }

    /// One line: `{"error": kind, "detail": message}`.
    pub fn to_json(&self) -> String {
        json!({"error": self.kind(), "detail": self.to_string()}).to_string()
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> CliError {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::FileNotFound(path.display().to_string())
        } else {
            CliError::Io(format!("{}: {e}", path.display()))
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::MissingConfigKey(k) => CliError::MissingConfigKey(k),
            ConfigError::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => CliError::FileNotFound(path),
            other => CliError::InvalidConfig(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::FileNotFound(p) => CliError::FileNotFound(p),
            PipelineError::Record { .. } => CliError::BadRecord(e.to_string()),
            PipelineError::NoRecords(_) => CliError::NoRecords(e.to_string()),
            PipelineError::Io { .. } => CliError::Io(e.to_string()),
            PipelineError::Bpe(b) => CliError::from(b),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::CheckpointMismatch(_) | TensorError::Manifest(_) => CliError::CheckpointMismatch(e.to_string()),
            TensorError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<HeadError> for CliError {
    fn from(e: HeadError) -> Self {
        match e {
            HeadError::Tensor(t) => CliError::from(t),
            HeadError::MissingBugReport(_) | HeadError::BugVectorWidth { .. } => CliError::BadRecord(e.to_string()),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<BpeError> for CliError {
    fn from(e: BpeError) -> Self {
        match e {
            BpeError::CorpusEmpty => CliError::NoRecords(e.to_string()),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::BadRecord(e.to_string())
    }
}
