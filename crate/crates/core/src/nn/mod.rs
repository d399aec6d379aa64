//! Minimal dense-tensor math with reverse-mode autodiff, the layer primitives
//! the models need, and optimizers.

pub mod gradcheck;
mod graph;
mod layers;
mod optim;
mod params;
pub mod tensor;

pub use graph::{sigmoid, softmax, Graph, Var};
pub use layers::{lstm_cell_step, Embedding, Linear, LstmParams};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{Gradients, ParamId, ParamSet};
pub use tensor::{matmul, Tensor};
