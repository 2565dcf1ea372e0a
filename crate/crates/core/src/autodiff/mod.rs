//! Dense `f64` tensors, convolution kernels, a reverse-mode tape, Adam and
//! checkpoint I/O.

mod checkpoint;
pub mod kernels;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use kernels::{conv2d_forward, selu, softmax, Activation, Padding, SELU_ALPHA, SELU_LAMBDA};
pub use optim::{adam_step, clip_gradients, AdamConfig, Clipping, OptimizerState, StepReport};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
