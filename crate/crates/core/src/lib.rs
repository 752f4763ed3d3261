pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod lstm;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod train;
pub mod vae;
pub mod vqvae;

pub use error::{Error, Result};
