//! Reverse-mode differentiation over dense `f64` tensors.

mod gradcheck;
mod graph;
mod optim;
mod params;

pub use gradcheck::grad_check;
pub use graph::{Graph, Stabilizer, Var};
pub use optim::Adam;
pub use params::{Binding, GradientMap, Initializer, ParamId, ParamStore};
pub(crate) use params::stream_seed;
