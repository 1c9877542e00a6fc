//! Dense tensors, reverse-mode differentiation and the optimizer.

mod gradcheck;
mod graph;
mod optim;
mod params;
mod serialize;
mod tensor;

pub use gradcheck::{finite_difference_check, run_checks, CheckOutcome, GradCheck};
pub use graph::{CustomOp, Gradients, Graph, Segment, Var};
pub use optim::{clip_grad_norm, grad_norm, optimizer_step, AdamConfig, OptimizerState};
pub use params::{Binder, ParameterStore};
pub use serialize::{decode_segment, encode_segment, SEGMENT_FORMAT_VERSION};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
