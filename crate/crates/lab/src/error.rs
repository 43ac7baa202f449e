use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("cannot parse configuration: {0}")]
    Parse(String),

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed file: {message}")]
    Format { path: PathBuf, message: String },

    #[error("simulation failed at n = {n}, path {path_index}")]
    Path {
        n: u64,
        path_index: u64,
        #[source]
        source: exitlab_core::Error,
    },

    #[error(transparent)]
    Core(#[from] exitlab_core::Error),

    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

impl LabError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        LabError::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}
