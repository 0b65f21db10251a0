//! Minimal neural-network kernel for list-structured inputs.
//!
//! Every layer is a pair of free functions: a forward pass and a backward
//! pass that consumes whatever the forward pass had to remember. There is no
//! tape and no graph; models wire the pieces together by hand.

mod gradcheck;
mod layers;
mod loss;
mod matrix;
mod optim;
mod scalar;

pub use gradcheck::{finite_diff_gradcheck, relative_error, GradCheckEntry, GradCheckReport, GRADCHECK_EPS};
pub use layers::{
    dense, dense_backward, global_context_layer, global_context_layer_backward, masked_global_max_pool,
    max_pool_backward, relu, relu_backward, rowwise_linear, rowwise_linear_backward, rowwise_linear_masked,
    rowwise_linear_masked_backward, GclOutput, LinearParams, PoolOutput,
};
pub use loss::{cross_entropy, cross_entropy_logit_grad, softmax, ClassDistribution, CROSS_ENTROPY_EPS};
pub use matrix::{Mask, Matrix};
pub use optim::{Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use scalar::Scalar;

use thiserror::Error;

/// Errors raised by the numeric kernel.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("{op}: dimension mismatch, expected {expected}, found {found}")]
    DimensionMismatch {
        op: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{op}: every row is masked, nothing to pool")]
    EmptyPool { op: &'static str },
    #[error("non-finite gradient at tensor {tensor}, element {index}")]
    NonFiniteGradient { tensor: usize, index: usize },
}

pub(crate) fn check_dim(op: &'static str, expected: usize, found: usize) -> Result<(), NnError> {
    if expected == found {
        Ok(())
    } else {
        Err(NnError::DimensionMismatch { op, expected, found })
    }
}
