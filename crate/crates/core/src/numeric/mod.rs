//! Dense matrices, parameters and reverse-mode gradients.

pub mod gradcheck;
pub mod graph;
pub mod gru;
pub mod matrix;
pub mod optim;
pub mod params;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use gru::{gru_cell, Gru};
pub use matrix::{l2_normalize, matmul, sigmoid, sigmoid_scalar, softmax_rows, tanh_activation, Matrix};
pub use optim::Adam;
pub use params::{ParamId, ParamStore, Parameter};
