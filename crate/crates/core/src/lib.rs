pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod gat;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pooling;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
