//! Dense tensors and reverse-mode automatic differentiation.

mod fd;
pub mod fsum;
mod store;
mod tape;
#[allow(clippy::module_inception)]
mod tensor;

pub use fd::{finite_difference_gradient, gradients_close, DEFAULT_FD_STEP};
pub use fsum::{fdot, fsum};
pub use store::{ParameterStore, TapeBinding};
pub use tape::{masked_softmax, sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;
