//! Forward and backward passes of the encoder-decoder network.

use crate::error::{Error, Result};
use crate::numerics::{
    activate, box_mean, box_mean_backward, concat_channels, conv2d, conv2d_backward, pool2d, pool2d_backward,
    relu_backward_inplace, split_channels, upsample2d, upsample2d_backward, Activation, PoolMode, Pooled, Tensor,
};

use super::{InceptionWidths, ParameterSet};

/// Intermediate activations kept for the backward pass.
pub struct ForwardTrace {
    input: Tensor,
    encoder: Vec<EncoderTrace>,
    decoder: Vec<DecoderTrace>,
    logits: Tensor,
    probs: Tensor,
}

impl ForwardTrace {
    pub fn probabilities(&self) -> &Tensor {
        &self.probs
    }

    pub fn logits(&self) -> &Tensor {
        &self.logits
    }

    pub fn into_probabilities(self) -> Tensor {
        self.probs
    }
}

struct EncoderTrace {
    /// Max-pool of the previous level's output; `None` for level 1.
    pooled_from_prev: Option<Pooled>,
    block: BlockTrace,
}

impl EncoderTrace {
    fn output(&self) -> &Tensor {
        match &self.block {
            BlockTrace::Plain { conv2, .. } => conv2,
            BlockTrace::Inception { output, .. } => output,
        }
    }
}

// one short-lived trace per block; boxing buys nothing
#[allow(clippy::large_enum_variant)]
enum BlockTrace {
    Plain {
        conv1: Tensor,
        conv2: Tensor,
    },
    Inception {
        b1: Tensor,
        r3: Tensor,
        b3: Tensor,
        r5: Tensor,
        b5: Tensor,
        smoothed: Tensor,
        bp: Tensor,
        output: Tensor,
    },
}

struct DecoderTrace {
    level: usize,
    up_low: Tensor,
    cat: Tensor,
    output: Tensor,
}

fn padding(kernel: usize) -> usize {
    kernel / 2
}

fn conv_relu(params: &ParameterSet, id: &str, input: &Tensor) -> Result<Tensor> {
    let mut out = conv_linear(params, id, input)?;
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(out)
}

fn conv_linear(params: &ParameterSet, id: &str, input: &Tensor) -> Result<Tensor> {
    let layer = params.layer(id);
    let k = layer.weights.shape()[2];
    conv2d(input, &layer.weights, &layer.bias, 1, padding(k))
}

/// Backward through `relu(conv(input))`, accumulating parameter gradients.
/// `upstream` is consumed as scratch.
fn conv_relu_backward(
    params: &ParameterSet,
    grads: &mut ParameterSet,
    id: &str,
    input: &Tensor,
    output: &Tensor,
    mut upstream: Tensor,
    need_input: bool,
) -> Result<Option<Tensor>> {
    relu_backward_inplace(output, &mut upstream);
    conv_linear_backward(params, grads, id, input, &upstream, need_input)
}

fn conv_linear_backward(
    params: &ParameterSet,
    grads: &mut ParameterSet,
    id: &str,
    input: &Tensor,
    upstream: &Tensor,
    need_input: bool,
) -> Result<Option<Tensor>> {
    let layer = params.layer(id);
    let k = layer.weights.shape()[2];
    let g = conv2d_backward(input, &layer.weights, upstream, 1, padding(k), need_input)?;
    let dst = grads.layer_mut(id);
    dst.weights.add_assign(&g.grad_kernels)?;
    for (b, gb) in dst.bias.iter_mut().zip(&g.grad_bias) {
        *b += gb;
    }
    Ok(g.grad_input)
}

fn add_into(acc: &mut Option<Tensor>, t: Tensor) -> Result<()> {
    match acc {
        Some(a) => a.add_assign(&t),
        None => {
            *acc = Some(t);
            Ok(())
        }
    }
}

fn check_batch(params: &ParameterSet, batch: &Tensor) -> Result<()> {
    let s = params.spec().input_size;
    let [_, c, h, w] = batch.shape();
    if c != 1 || h != s || w != s {
        return Err(Error::shape(format!(
            "network expects (N, 1, {s}, {s}) input, got {:?}",
            batch.shape()
        )));
    }
    Ok(())
}

/// Per-pixel nodule probabilities, shape `(N, 1, S, S)`.
pub fn forward(params: &ParameterSet, batch: &Tensor) -> Result<Tensor> {
    Ok(forward_trace(params, batch)?.into_probabilities())
}

pub fn forward_trace(params: &ParameterSet, batch: &Tensor) -> Result<ForwardTrace> {
    check_batch(params, batch)?;
    let spec = params.spec();
    let mut encoder: Vec<EncoderTrace> = Vec::with_capacity(spec.depth);
    for level in 1..=spec.depth {
        let pooled_from_prev = match encoder.last() {
            Some(prev) => Some(pool2d(prev.output(), 2, PoolMode::Max)?),
            None => None,
        };
        let x = pooled_from_prev.as_ref().map_or(batch, |p| &p.output);
        let prefix = format!("enc{level}");
        let block = if spec.uses_inception(level) {
            let id = |name: &str| format!("{prefix}.inception.{name}");
            let b1 = conv_relu(params, &id("branch1x1"), x)?;
            let r3 = conv_relu(params, &id("reduce3x3"), x)?;
            let b3 = conv_relu(params, &id("branch3x3"), &r3)?;
            let r5 = conv_relu(params, &id("reduce5x5"), x)?;
            let b5 = conv_relu(params, &id("branch5x5"), &r5)?;
            let smoothed = box_mean(x, 3)?;
            let bp = conv_relu(params, &id("branchpool"), &smoothed)?;
            let output = concat_channels(&[&b1, &b3, &b5, &bp])?;
            BlockTrace::Inception {
                b1,
                r3,
                b3,
                r5,
                b5,
                smoothed,
                bp,
                output,
            }
        } else {
            let conv1 = conv_relu(params, &format!("{prefix}.conv1"), x)?;
            let conv2 = conv_relu(params, &format!("{prefix}.conv2"), &conv1)?;
            BlockTrace::Plain { conv1, conv2 }
        };
        encoder.push(EncoderTrace {
            pooled_from_prev,
            block,
        });
    }

    let mut decoder: Vec<DecoderTrace> = Vec::with_capacity(spec.depth - 1);
    for level in (1..spec.depth).rev() {
        let below = match decoder.last() {
            Some(d) => &d.output,
            None => encoder[spec.depth - 1].output(),
        };
        let up_low = conv_relu(params, &format!("dec{level}.up"), below)?;
        let up = upsample2d(&up_low, 2)?;
        let cat = concat_channels(&[&up, encoder[level - 1].output()])?;
        let output = conv_relu(params, &format!("dec{level}.conv"), &cat)?;
        decoder.push(DecoderTrace {
            level,
            up_low,
            cat,
            output,
        });
    }

    let head_in = &decoder.last().expect("depth >= 2").output;
    let logits = conv_linear(params, "head", head_in)?;
    let probs = activate(&logits, Activation::Sigmoid);
    Ok(ForwardTrace {
        input: batch.clone(),
        encoder,
        decoder,
        logits,
        probs,
    })
}

/// Parameter gradients of a scalar objective given `∂objective/∂logits`.
pub fn backward(params: &ParameterSet, trace: &ForwardTrace, grad_logits: &Tensor) -> Result<ParameterSet> {
    if grad_logits.shape() != trace.logits.shape() {
        return Err(Error::shape(format!(
            "logit gradient {:?} does not match logits {:?}",
            grad_logits.shape(),
            trace.logits.shape()
        )));
    }
    let spec = params.spec();
    let depth = spec.depth;
    let mut grads = params.zeros_like();

    // head
    let head_in = &trace.decoder.last().expect("depth >= 2").output;
    let mut d_cur =
        conv_linear_backward(params, &mut grads, "head", head_in, grad_logits, true)?.expect("input grad requested");

    // skip-connection gradients per encoder level (index level - 1)
    let mut d_enc: Vec<Option<Tensor>> = (0..depth).map(|_| None).collect();

    // decoder, in reverse of the forward order: level 1 first
    for (idx, dt) in trace.decoder.iter().enumerate().rev() {
        let level = dt.level;
        let d_cat = conv_relu_backward(
            params,
            &mut grads,
            &format!("dec{level}.conv"),
            &dt.cat,
            &dt.output,
            d_cur,
            true,
        )?
        .expect("input grad requested");
        let c = spec.channels(level);
        let mut parts = split_channels(&d_cat, &[c, c])?.into_iter();
        let d_up = parts.next().expect("two parts");
        let d_skip = parts.next().expect("two parts");
        add_into(&mut d_enc[level - 1], d_skip)?;
        let d_up_low = upsample2d_backward(&d_up, 2)?;
        let below = if idx == 0 {
            trace.encoder[depth - 1].output()
        } else {
            &trace.decoder[idx - 1].output
        };
        d_cur = conv_relu_backward(
            params,
            &mut grads,
            &format!("dec{level}.up"),
            below,
            &dt.up_low,
            d_up_low,
            true,
        )?
        .expect("input grad requested");
    }
    add_into(&mut d_enc[depth - 1], d_cur)?;

    // encoder, deepest level first
    for level in (1..=depth).rev() {
        let et = &trace.encoder[level - 1];
        let d_out = d_enc[level - 1]
            .take()
            .ok_or_else(|| Error::shape(format!("no gradient reached encoder level {level}")))?;
        let x = et.pooled_from_prev.as_ref().map_or(&trace.input, |p| &p.output);
        let need_input = level > 1;
        let prefix = format!("enc{level}");
        let d_x = match &et.block {
            BlockTrace::Plain { conv1, conv2 } => {
                let d1 = conv_relu_backward(
                    params,
                    &mut grads,
                    &format!("{prefix}.conv2"),
                    conv1,
                    conv2,
                    d_out,
                    true,
                )?
                .expect("input grad requested");
                conv_relu_backward(params, &mut grads, &format!("{prefix}.conv1"), x, conv1, d1, need_input)?
            }
            BlockTrace::Inception {
                b1,
                r3,
                b3,
                r5,
                b5,
                smoothed,
                bp,
                ..
            } => {
                let id = |name: &str| format!("{prefix}.inception.{name}");
                let widths = InceptionWidths::split(spec.channels(level)).as_array();
                let mut parts = split_channels(&d_out, &widths)?.into_iter();
                let (d_b1, d_b3, d_b5, d_bp) = (
                    parts.next().expect("four parts"),
                    parts.next().expect("four parts"),
                    parts.next().expect("four parts"),
                    parts.next().expect("four parts"),
                );
                let mut acc: Option<Tensor> = None;
                if let Some(g) = conv_relu_backward(params, &mut grads, &id("branch1x1"), x, b1, d_b1, need_input)? {
                    add_into(&mut acc, g)?;
                }
                let d_r3 = conv_relu_backward(params, &mut grads, &id("branch3x3"), r3, b3, d_b3, true)?
                    .expect("input grad requested");
                if let Some(g) = conv_relu_backward(params, &mut grads, &id("reduce3x3"), x, r3, d_r3, need_input)? {
                    add_into(&mut acc, g)?;
                }
                let d_r5 = conv_relu_backward(params, &mut grads, &id("branch5x5"), r5, b5, d_b5, true)?
                    .expect("input grad requested");
                if let Some(g) = conv_relu_backward(params, &mut grads, &id("reduce5x5"), x, r5, d_r5, need_input)? {
                    add_into(&mut acc, g)?;
                }
                if let Some(g) =
                    conv_relu_backward(params, &mut grads, &id("branchpool"), smoothed, bp, d_bp, need_input)?
                {
                    add_into(&mut acc, box_mean_backward(&g, 3)?)?;
                }
                acc
            }
        };
        if level > 1 {
            let d_x = d_x.expect("input grad requested above level 1");
            let pooled = et.pooled_from_prev.as_ref().expect("levels above 1 are pooled");
            let prev_out = trace.encoder[level - 2].output();
            let d_prev = pool2d_backward(prev_out.shape(), 2, PoolMode::Max, pooled.argmax.as_deref(), &d_x)?;
            add_into(&mut d_enc[level - 2], d_prev)?;
        }
    }
    Ok(grads)
}
