use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] micod_core::Error),

    #[error("invalid network configuration: {0}")]
    Config(String),

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    #[error("every row of the decision head is masked")]
    AllMasked,

    #[error("action does not replay against the state: {0}")]
    Replay(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
