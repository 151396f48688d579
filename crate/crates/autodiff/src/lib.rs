//! Reverse-mode differentiation over vector-valued nodes.
//!
//! The engine is deliberately small: it knows the handful of primitives a
//! graph-reasoning grounding model needs (matrix-vector products against
//! named parameters, concatenation, sums, `tanh`, softmax, max-of-two,
//! cosine similarity, smooth-L1, negative log of an indexed probability).
//! Values are computed eagerly while the tape is recorded, so callers can
//! read intermediate values and take discrete decisions (argmax, gating)
//! mid-forward. Such decisions are constants as far as [`Tape::backward`]
//! is concerned.
//!
//! ```
//! use grounder_autodiff::{ParameterStore, Tape};
//!
//! let mut store = ParameterStore::new();
//! let w = store.register("w", &[1, 2], vec![2.0, -1.0]).unwrap();
//! let mut tape = Tape::new(&store);
//! let x = tape.constant(vec![3.0, 4.0]);
//! let y = tape.matvec(w, x);
//! let loss = tape.index(y, 0);
//! assert_eq!(tape.scalar(loss), 2.0);
//! let grads = tape.backward(loss);
//! assert_eq!(grads.get(w), &[3.0, 4.0]);
//! ```

pub mod adam;
pub mod gradcheck;
pub mod params;
pub mod tape;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use params::{Gradients, ParamId, ParameterStore, Tensor};
pub use tape::{Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameter `{0}` is registered twice")]
    DuplicateParameter(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("parameter `{name}` expects {expected} values, got {actual}")]
    ShapeMismatch {
        name: String,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value produced by `{op}` (node {node})")]
    NonFinite { op: &'static str, node: usize },
    #[error("non-finite value in parameter `{0}` after update")]
    NonFiniteParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
