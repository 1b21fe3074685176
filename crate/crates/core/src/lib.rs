pub mod dataset;
pub mod config;
pub mod error;
pub mod fusion;
pub mod grounding;
pub mod guidance;
pub mod pipeline;
pub mod temporal;
pub mod tensor;

pub use error::{Error, Result};
