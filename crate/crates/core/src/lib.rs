//! Latent-space recourse for classifiers and causal decision models.

pub mod adam;
pub mod audit;
pub mod causal;
pub mod classifier;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod persist;
pub mod revise;
pub mod tape;
pub mod tensor;
pub mod testbed;
pub mod vae;

pub use error::{Error, ErrorCategory, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
