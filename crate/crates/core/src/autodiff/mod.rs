//! Dense reverse-mode differentiation and the Adam optimizer.

mod adam;
mod check;
mod matrix;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use check::grad_check;
pub use matrix::{xavier_limit, Matrix};
pub use tape::{sigmoid, Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("index {index} out of bounds ({bound}) in {op}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("non-finite value: {0}")]
    Numerical(String),
}
