pub mod attacks;
pub mod conv;
pub mod datasets;
pub mod error;
pub mod harness;
mod gemm;
pub mod nn;
pub mod ortho;
pub mod rng;
pub mod spectral;
pub mod tensor;
pub mod window;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
