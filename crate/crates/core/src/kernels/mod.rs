//! Differentiable kernels shared by both networks.
//!
//! Every forward kernel has a hand-written backward counterpart. Batched
//! variants accept a leading batch axis and accumulate parameter gradients
//! over the batch in index order, so results are bitwise reproducible.

use std::collections::BTreeMap;

use crate::tensor::Tensor;

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod gradcheck;
pub mod init;
pub mod linear;
pub mod loss;
pub mod lstm;
pub mod pool;

pub use activation::{dropout, dropout_backward, relu, relu_backward, sigmoid, sigmoid_scalar};
pub use adam::{adam_step, AdamState};
pub use batchnorm::{batchnorm3d, batchnorm3d_backward, BatchNormCache, BatchNormParams};
pub use conv::{conv2d, conv2d_backward, conv3d, conv3d_backward, ConvSpec};
pub use gradcheck::{grad_check, grad_check_piecewise, relative_error, GradCheckReport};
pub use init::glorot_uniform;
pub use linear::{fully_connected, fully_connected_backward};
pub use loss::{
    bce_loss, bce_loss_backward_logits, cosine_consistency_loss, cosine_consistency_loss_backward,
    mse_loss, mse_loss_backward,
};
pub use lstm::{lstm_sequence, lstm_sequence_backward, LstmCache, LstmGrads, LstmParams};
pub use pool::{
    maxpool3d, maxpool3d_argmax, maxpool3d_backward, spp3d, spp3d_argmax, spp3d_backward,
    spp_output_len,
};

/// Training vs inference behaviour for dropout and batch norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Gradient of a layer with respect to its input and each named parameter.
#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub d_input: Tensor,
    pub d_params: BTreeMap<String, Tensor>,
}

impl LayerGrads {
    pub fn param(&self, name: &str) -> &Tensor {
        &self.d_params[name]
    }
}
