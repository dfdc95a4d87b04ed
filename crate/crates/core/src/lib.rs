pub mod channel;
pub mod compress;
pub mod influence;
pub mod power;
pub mod error;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{GradientMatrix, NoiseKind, RngStream};
pub mod harness;
pub mod pipeline;
