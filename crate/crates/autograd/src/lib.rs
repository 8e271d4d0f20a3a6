//! Reverse-mode automatic differentiation over dense row-major `f32`
//! matrices, with the layer set needed by the voice-conversion model
//! (linear, 1-D convolution, LSTM, layer norm) and an Adam optimizer.
//!
//! Matrix products go through `matrixmultiply`; with the `parallel` feature
//! they are split across the rayon pool by output rows. Results are bitwise
//! identical with and without the feature.

pub mod check;
pub mod gemm;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod par;
pub mod params;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use nn::Ctx;
pub use optim::{clip_grad_norm, Adam};
pub use par::Exec;
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
