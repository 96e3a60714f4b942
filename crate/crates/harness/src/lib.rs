//! The `micod` command line: dataset generation, training, evaluation of
//! learned and classical dispatch policies, and metric reports.

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod generate;
pub mod report;
pub mod results;
pub mod train;

pub use error::{Error, Result};
