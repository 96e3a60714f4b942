use thiserror::Error;

use crate::domain::{DriverId, OrderId};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("location ({x}, {y}) is outside the fence")]
    OutOfFence { x: f64, y: f64 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dataset is not classifiable: {0}")]
    Unclassified(String),

    #[error("constraint violation: {0}")]
    Constraint(String),

    #[error("driver {0} is not idle")]
    DriverNotIdle(DriverId),

    #[error("order {0} is not open")]
    OrderNotOpen(OrderId),

    #[error("illegal sub-action: {0}")]
    IllegalAction(String),

    #[error("matching instance too large for exhaustive search ({0} on the short side, limit 8)")]
    TooLarge(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
