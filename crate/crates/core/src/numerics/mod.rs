//! Dense `f64` tensors with reverse-mode differentiation.

mod checkpoint;
mod graph;
mod params;
mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use graph::{Graph, Var};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
