//! Auto-regressive actor-critic for batch dispatch, with a small
//! reverse-mode differentiation core.
//!
//! The actor builds a batch action one sub-action at a time: at each
//! sub-step it encodes the remaining pool, summarizes the partial action
//! into a context vector, then either holds or picks one pair. The critic
//! scores outer states only.

pub mod checkpoint;
pub mod error;
pub mod matrix;
pub mod model;
pub mod net;
pub mod tape;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use model::{D2sn, PolicyEval, SampledAction};
pub use net::{D2snConfig, InitScheme, ParamStore};
pub use tape::{Tape, Var};
