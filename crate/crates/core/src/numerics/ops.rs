use crate::error::{Error, Result};

use super::Tensor;

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample2d(input: &Tensor, factor: usize) -> Result<Tensor> {
    if factor < 2 {
        return Err(Error::invalid(format!("upsample factor must be >= 2, got {factor}")));
    }
    let [n, c, h, w] = input.shape();
    let (ho, wo) = (h * factor, w * factor);
    let src = input.data();
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let dst = out.data_mut();
    for plane in 0..n * c {
        for y in 0..ho {
            let src_row = &src[(plane * h + y / factor) * w..][..w];
            let dst_row = &mut dst[(plane * ho + y) * wo..][..wo];
            for (x, v) in dst_row.iter_mut().enumerate() {
                *v = src_row[x / factor];
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`upsample2d`]: sums each `factor × factor` block.
pub fn upsample2d_backward(upstream: &Tensor, factor: usize) -> Result<Tensor> {
    if factor < 2 {
        return Err(Error::invalid(format!("upsample factor must be >= 2, got {factor}")));
    }
    let [n, c, ho, wo] = upstream.shape();
    if ho % factor != 0 || wo % factor != 0 {
        return Err(Error::shape(format!(
            "upstream {ho}x{wo} is not a multiple of factor {factor}"
        )));
    }
    let (h, w) = (ho / factor, wo / factor);
    let up = upstream.data();
    let mut grad = Tensor::zeros([n, c, h, w]);
    let g = grad.data_mut();
    for plane in 0..n * c {
        for y in 0..ho {
            let up_row = &up[(plane * ho + y) * wo..][..wo];
            let g_row = &mut g[(plane * h + y / factor) * w..][..w];
            for (x, &v) in up_row.iter().enumerate() {
                g_row[x / factor] += v;
            }
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activate(input: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Relu => input.map(|v| v.max(0.0)),
        Activation::Sigmoid => input.map(sigmoid),
    }
}

/// Backward pass of [`activate`]. ReLU reads the sign of `input`; sigmoid
/// reuses the forward `output` (σ' = σ(1 − σ)).
pub fn activation_backward(kind: Activation, input: &Tensor, output: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if input.shape() != upstream.shape() || output.shape() != upstream.shape() {
        return Err(Error::shape(format!(
            "activation backward: input {:?}, output {:?}, upstream {:?}",
            input.shape(),
            output.shape(),
            upstream.shape()
        )));
    }
    let data = match kind {
        Activation::Relu => input
            .data()
            .iter()
            .zip(upstream.data())
            .map(|(&x, &u)| if x > 0.0 { u } else { 0.0 })
            .collect(),
        Activation::Sigmoid => output
            .data()
            .iter()
            .zip(upstream.data())
            .map(|(&s, &u)| s * (1.0 - s) * u)
            .collect(),
    };
    Tensor::new(upstream.shape(), data)
}

/// In-place ReLU backward on an upstream buffer, masked by the forward output.
pub(crate) fn relu_backward_inplace(output: &Tensor, upstream: &mut Tensor) {
    for (u, &y) in upstream.data_mut().iter_mut().zip(output.data()) {
        if y <= 0.0 {
            *u = 0.0;
        }
    }
}

/// Stacks `a` then `b` along the channel axis.
pub fn channel_concat(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    concat_channels(&[a, b])
}

/// Channel concatenation of any number of tensors, in order.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::invalid("nothing to concatenate"))?;
    let [n, _, h, w] = first.shape();
    let mut c = 0;
    for p in parts {
        let [pn, pc, ph, pw] = p.shape();
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::shape(format!(
                "cannot concat {:?} with {:?}: batch and spatial dims differ",
                p.shape(),
                first.shape()
            )));
        }
        c += pc;
    }
    let mut data = Vec::with_capacity(n * c * h * w);
    for i in 0..n {
        for p in parts {
            data.extend_from_slice(p.item(i));
        }
    }
    Tensor::new([n, c, h, w], data)
}

/// Inverse of [`concat_channels`] for gradients: cuts `upstream` into
/// consecutive channel groups of the given widths.
pub fn split_channels(upstream: &Tensor, widths: &[usize]) -> Result<Vec<Tensor>> {
    let [n, c, h, w] = upstream.shape();
    if widths.iter().sum::<usize>() != c {
        return Err(Error::shape(format!(
            "split widths {widths:?} do not sum to {c} channels"
        )));
    }
    let plane = h * w;
    let mut bufs: Vec<Vec<f64>> = widths.iter().map(|&k| Vec::with_capacity(n * k * plane)).collect();
    for i in 0..n {
        let item = upstream.item(i);
        let mut off = 0;
        for (buf, &k) in bufs.iter_mut().zip(widths) {
            buf.extend_from_slice(&item[off..off + k * plane]);
            off += k * plane;
        }
    }
    bufs.into_iter()
        .zip(widths)
        .map(|(buf, &k)| Tensor::new([n, k, h, w], buf))
        .collect()
}

/// Splits a channel-concatenated gradient back into its two sources; the
/// first `channels_a` channels belong to `a`.
pub fn channel_split(upstream: &Tensor, channels_a: usize) -> Result<(Tensor, Tensor)> {
    let c = upstream.channels();
    if channels_a > c {
        return Err(Error::shape(format!("cannot split {channels_a} channels out of {c}")));
    }
    let mut parts = split_channels(upstream, &[channels_a, c - channels_a])?.into_iter();
    let a = parts.next().expect("two parts");
    let b = parts.next().expect("two parts");
    Ok((a, b))
}
