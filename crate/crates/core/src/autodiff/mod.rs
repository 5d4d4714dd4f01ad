//! Dense f64 tensors and reverse-mode automatic differentiation with
//! second-order support for input-gradient penalties.

mod fd;
mod graph;
mod params;
mod tensor;

pub use fd::{finite_difference, max_relative_error, DEFAULT_STEP};
pub use graph::{Adjoints, Graph, NodeId, LN_CLAMP};
pub use params::{Gradients, ParamBinding, ParamSet};
pub use tensor::Tensor;
