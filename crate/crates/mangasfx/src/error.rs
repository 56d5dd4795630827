use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] mangasfx_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Image { path: PathBuf, source: image::ImageError },
    #[error("{context}: {source}")]
    Json { context: String, source: serde_json::Error },
    #[error("config: {0}")]
    Config(String),
    #[error("page image(s) missing for page id(s): {}", .0.join(", "))]
    MissingPages(Vec<String>),
    #[error("sample {id}: {source}")]
    Sample { id: String, source: Box<Error> },
    #[error("{} generated output(s) missing: {}", .0.len(), .0.join(", "))]
    MissingOutputs(Vec<String>),
    #[error("{failed} of {total} sample(s) failed")]
    Generation { failed: usize, total: usize },
    #[error("adapter {uri}: {message}")]
    Adapter { uri: String, message: String },
    #[error("checkpoint {}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub fn for_sample(self, id: &str) -> Self {
        Error::Sample {
            id: id.to_string(),
            source: Box::new(self),
        }
    }
}
