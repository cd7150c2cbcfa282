//! Reverse-mode automatic differentiation over 4-D (NCHW) tensors.
//!
//! The engine is a define-by-run tape: every operation appends a node to a
//! [`Graph`], and [`Graph::backward`] walks the tape in reverse. All kernels
//! are single-threaded, so results are bit-reproducible for a fixed input
//! sequence. Scalar type is generic over [`Real`] (`f32` and `f64`).

mod error;
mod graph;
mod kernels;
mod optim;
mod real;
mod tensor;

pub use error::GraphError;
pub use graph::{Graph, Var};
pub use optim::Adam;
pub use real::{DType, Real};
pub use tensor::{Shape, Tensor};

pub type Result<T, E = GraphError> = std::result::Result<T, E>;
