//! Minimal reverse-mode differentiation over dense `f64` matrices, with an
//! Adam optimizer and finite-difference checking helpers.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod graph;
mod matrix;

pub use adam::{adam_step, global_norm, AdamConfig, Parameter};
pub use checkpoint::{Checkpoint, TensorRecord};
pub use graph::{sigmoid, Graph, UnaryOp, Var, LAYER_NORM_EPS};
pub use matrix::Matrix;
