use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: u64,
        message: String,
    },
    #[error(transparent)]
    Core(#[from] osrkit_core::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("stage {stage} failed (input {input:?}, seed {seed}): {source}")]
    Stage {
        stage: &'static str,
        input: Option<usize>,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
