//! Encoder-decoder segmentation network with inception encoder blocks and
//! skip connections, plus the class-balanced pixel loss.

mod loss;
mod network;
mod params;
mod spec;

pub use loss::{class_balanced_loss, class_balanced_weights, weighted_bce, LossOutput, PROB_EPS};
pub use network::{backward, forward, forward_trace, ForwardTrace};
pub use params::{build_network, transfer_weights, Layer, ParameterSet};
pub use spec::{conv_macs, count_macs, InceptionWidths, LayerShape, MacCount, NetworkSpec};

use crate::error::Result;
use crate::numerics::Tensor;

/// Loss and parameter gradients for one batch.
pub fn loss_and_gradients(params: &ParameterSet, batch: &Tensor, target: &Tensor) -> Result<(f64, ParameterSet)> {
    let trace = forward_trace(params, batch)?;
    let loss = class_balanced_loss(trace.probabilities(), target)?;
    let grads = backward(params, &trace, &loss.grad_logits)?;
    Ok((loss.loss, grads))
}
