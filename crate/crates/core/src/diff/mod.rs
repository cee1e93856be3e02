//! Dense 64-bit tensors with a reverse-mode tape.
//!
//! Every trainable computation in the crate is expressed as operations on a
//! [`Graph`]. Values are computed eagerly as nodes are pushed; a recording
//! graph additionally keeps what each backward rule needs.
//!
//! ```
//! use comet::diff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
//! let sq = g.square(x);
//! let y = g.sum(sq);
//! let grads = g.backward_scalar(y).unwrap();
//! assert_eq!(grads.get(x).data(), &[2.0, 4.0, 6.0]);
//! ```

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, grad_check_coords, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

/// Layer-norm epsilon used throughout the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("seed shape {seed:?} does not match output shape {output:?}")]
    SeedShape {
        seed: Vec<usize>,
        output: Vec<usize>,
    },
    #[error("graph was built for inference and holds no tape")]
    NotRecorded,
    #[error("expected a scalar output, got shape {0:?}")]
    NonScalar(Vec<usize>),
}

#[cfg(test)]
mod tests;
