//! A small dense-tensor CNN engine: convolution, max pooling, fully connected
//! layers, dropout, softmax cross-entropy with an L2 penalty, and Adam.
//!
//! Activations are stored height × width × channels. Everything is generic
//! over [`Real`] so training can run in `f32` while gradient checks run in
//! `f64`.

mod adam;
mod gradcheck;
mod layers;
mod model;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{
    conv2d_backward, conv2d_forward, dropout, fc_forward, loss_ce_l2, maxpool_backward, maxpool_forward, softmax,
    Activation, ConvGrads, ConvLayer, Mode,
};
pub use model::{argmax, Architecture, BatchOutput, CnnModel, Gradients, PARAM_NAMES};
pub use tensor::{Real, Tensor};

/// RNG used for initialization, shuffling and dropout.
pub type NnRng = rand_chacha::ChaCha8Rng;
