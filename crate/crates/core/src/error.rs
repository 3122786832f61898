use std::path::PathBuf;

/// Errors surfaced by every module of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("invalid config field `{field}`: {message}")]
    ConfigField { field: &'static str, message: String },

    #[error("manifest {path}:{line}: {message}")]
    Manifest { path: PathBuf, line: usize, message: String },

    #[error("duplicate record id `{0}`")]
    DuplicateId(String),

    #[error("missing sidecar entry for id `{0}`")]
    MissingSidecar(String),

    #[error("prompt source yielded too few distinct prompts for classes: {}", .0.join(", "))]
    InsufficientPrompts(Vec<String>),

    #[error("generator `{generator}` failed on prompt `{prompt}`: {message}")]
    Generator { generator: String, prompt: String, message: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown architecture `{0}`")]
    UnknownArch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("image error for {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
