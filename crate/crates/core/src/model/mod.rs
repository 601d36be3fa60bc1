//! Depth-1 (and stacked) transformers with optional per-head identity
//! terms, the tied-embedding attention-only copy model, and an MLP
//! baseline on concatenated one-hot inputs.

mod checkpoint;
mod config;
pub mod gradcheck;
mod mlp;
mod params;
mod transformer;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use config::{BlockStyle, Factors, InitScheme, MlpConfig, ModelConfig, Output, Scaling};
pub use mlp::{pair_coupling, Mlp, MlpParams};
pub use params::{LayerParams, ParamGroup, Parameters, Params};
pub use transformer::{Input, Trace, Transformer};
