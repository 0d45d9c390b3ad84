//! Differentiable computation substrate: tensors, the reverse-mode tape,
//! losses, and the optimizer used by every training loop in the crate.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{central_difference, relative_error, GradCheckReport};
pub use optim::{adamw_step, clip_global_norm, global_norm, GradMap, OptimizerState};
pub use tape::{Gradients, Tape, Value};
pub use tensor::Tensor;

use crate::error::Result;

/// `-log softmax(logits)[label]`.
pub fn cross_entropy<'t>(logits: Value<'t>, label: usize) -> Result<Value<'t>> {
    logits.cross_entropy(label)
}

#[cfg(test)]
mod tests;
