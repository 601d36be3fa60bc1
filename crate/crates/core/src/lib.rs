//! Template tasks over abstract symbols, small transformers with identity
//! reparametrizations, transformer random-features kernels and early-time
//! training probes.

pub mod error;
pub mod harness;
pub mod kernel;
pub mod model;
pub mod templates;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
