use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] micod_core::Error),

    #[error(transparent)]
    Net(#[from] micod_d2sn::Error),

    #[error("invalid training configuration: {0}")]
    Config(String),

    #[error("non-finite {what} in update; diagnostics: {dump}")]
    NonFinite { what: &'static str, dump: String },

    #[error("cannot resume: {0}")]
    Resume(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
