//! Dense tensors with a reverse-mode tape, generic over `f32` and `f64`.

pub mod checkpoint;
mod error;
mod init;
mod optim;
mod param;
mod scalar;
mod sparse;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use init::{xavier_init, xavier_uniform};
pub use optim::Adam;
pub use param::{ParamId, ParamStore};
pub use scalar::Scalar;
pub use sparse::SparseMatrix;
pub use tape::{matrix_dims, Gradients, NodeId, Tape, Var};
pub use tensor::Tensor;
