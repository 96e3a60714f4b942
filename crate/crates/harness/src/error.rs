use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failures grouped by the exit code they map to.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Data(_) => 3,
            Error::Runtime(_) => 4,
        }
    }
}

impl From<micod_core::Error> for Error {
    fn from(e: micod_core::Error) -> Self {
        use micod_core::Error as E;
        match e {
            E::InvalidConfig(_) => Error::Usage(e.to_string()),
            E::Parse { .. } | E::Unclassified(_) | E::OutOfFence { .. } | E::Io(_) => Error::Data(e.to_string()),
            _ => Error::Runtime(e.to_string()),
        }
    }
}

impl From<micod_d2sn::Error> for Error {
    fn from(e: micod_d2sn::Error) -> Self {
        use micod_d2sn::Error as E;
        match e {
            E::Core(c) => c.into(),
            E::Checkpoint(_) | E::Io(_) => Error::Data(e.to_string()),
            E::Config(_) => Error::Usage(e.to_string()),
            _ => Error::Runtime(e.to_string()),
        }
    }
}

impl From<micod_trainer::Error> for Error {
    fn from(e: micod_trainer::Error) -> Self {
        use micod_trainer::Error as E;
        match e {
            E::Core(c) => c.into(),
            E::Net(n) => n.into(),
            E::Config(_) => Error::Usage(e.to_string()),
            E::Resume(_) => Error::Data(e.to_string()),
            _ => Error::Runtime(e.to_string()),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Data(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Runtime(e.to_string())
    }
}
