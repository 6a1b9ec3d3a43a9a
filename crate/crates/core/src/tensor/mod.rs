//! Dense matrices and the reverse-mode tape the networks are built on.

mod graph;
mod mat;

pub use graph::{Gradients, Graph, Var};
pub use mat::{gemm, Mat};
