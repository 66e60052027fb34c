//! Decoupled fMRI-to-video reconstruction at desk scale.

pub mod brain;
pub mod checkpoint;
pub mod data;
pub mod decoupler;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod graph;
pub mod harness;
pub mod inference;
pub mod losses;
pub mod nn;
pub mod rng;
pub mod tasks;
pub mod tensor;
pub mod text;
pub mod video;

pub use error::{Error, Result};
pub use tensor::Tensor;
