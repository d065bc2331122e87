use thiserror::Error;

/// Crate-wide error type.
///
/// `MissingArtifact` is kept separate from plain `Io` because the command-line
/// front end maps it to its own exit code: a missing dataset or checkpoint is
/// an ordering mistake by the caller (generate/train first), not a corrupt
/// installation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Engine(#[from] ftnn::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("shape: {0}")]
    Shape(String),

    #[error("numerical: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
