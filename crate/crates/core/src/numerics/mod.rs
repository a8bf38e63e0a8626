//! Differentiable computation substrate: tensors, a reverse-mode tape,
//! layers, Adam and a finite-difference checker.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, Stencil};
pub use graph::{sigmoid, Graph, Var};
pub use layers::{lstm_forward, mlp_compose, Dropout, Linear, Lstm, Mlp};
pub use optim::Adam;
pub use params::{Gradients, Init, ParamId, ParamStore};
pub use tensor::{softmax, Tensor};
