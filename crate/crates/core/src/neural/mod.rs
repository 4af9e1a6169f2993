//! Hand-rolled neural core: tensors, dense and LSTM layers, softmax
//! cross-entropy with a semantic penalty, Adam, and finite-difference
//! gradient checking. All arithmetic is f64 with fixed accumulation
//! order, so identical seeds produce bit-identical parameters.

pub mod adam;
pub mod dense;
pub mod gradcheck;
pub mod loss;
pub mod lstm;
pub mod network;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use dense::{Activation, DenseLayer};
pub use gradcheck::{check_input_gradients, check_param_gradients, loss_and_grads, GradCheck};
pub use loss::{softmax_rows, weighted_ce_with_semantics, LossOutput, UNSAFE};
pub use lstm::LstmLayer;
pub use network::{Architecture, ForwardCache, GradStore, Network, NUM_CLASSES};
pub use tensor::Tensor2;

#[derive(Debug, thiserror::Error)]
pub enum NeuralError {
    #[error("input width mismatch: expected {expected} columns, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite loss at epoch {epoch}, step {step} (loss = {loss})")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },
}
