//! Dense tensors and a reverse-mode tape.
//!
//! A [`Graph`] records every op applied to its [`Var`]s; [`Graph::backward`]
//! replays the record in reverse to produce [`Gradients`] for grad-tracking leaves.
//! Every forward op rejects non-finite results with [`TensorError::NonFinite`].
//!
//! Broadcasting is limited to a leading batch: `add_bcast`/`mul_bcast` accept a
//! right operand whose shape equals the trailing dimensions of the left one.

mod error;
mod gradcheck;
mod graph;
pub mod kernels;
mod nn;
mod ops;
mod real;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_many, GradCheck};
pub use graph::{CustomBackward, Gradients, Graph, Var};
pub use ops::sigmoid;
pub use real::{DType, Real};
pub use tensor::{numel, Tensor};

/// `layer_norm` epsilon used throughout the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;
