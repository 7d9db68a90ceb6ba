use crate::error::{Error, Result};

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Mean,
}

/// Result of [`pool2d`]. `argmax` holds, per output cell, the flat index of
/// the winning input element; it is only recorded for max pooling.
#[derive(Debug, Clone)]
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Option<Vec<usize>>,
}

/// Non-overlapping `window × window` pooling. No implicit padding.
pub fn pool2d(input: &Tensor, window: usize, mode: PoolMode) -> Result<Pooled> {
    let [n, c, h, w] = input.shape();
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(Error::shape(format!(
            "spatial dims {h}x{w} are not divisible by pool window {window}"
        )));
    }
    let (ho, wo) = (h / window, w / window);
    let mut output = Tensor::zeros([n, c, ho, wo]);
    let mut argmax = (mode == PoolMode::Max).then(|| vec![0usize; n * c * ho * wo]);
    let src = input.data();
    let area = (window * window) as f64;
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                let mut sum = 0.0;
                for dy in 0..window {
                    let row = base + (oy * window + dy) * w + ox * window;
                    for (dx, &v) in src[row..row + window].iter().enumerate() {
                        sum += v;
                        // strict comparison keeps the first maximum in scan order
                        if v > best {
                            best = v;
                            best_idx = row + dx;
                        }
                    }
                }
                output.data_mut()[o] = match mode {
                    PoolMode::Max => best,
                    PoolMode::Mean => sum / area,
                };
                if let Some(am) = argmax.as_mut() {
                    am[o] = best_idx;
                }
                o += 1;
            }
        }
    }
    Ok(Pooled { output, argmax })
}

/// Routes `upstream` back through [`pool2d`].
pub fn pool2d_backward(
    input_shape: [usize; 4],
    window: usize,
    mode: PoolMode,
    argmax: Option<&[usize]>,
    upstream: &Tensor,
) -> Result<Tensor> {
    let [n, c, h, w] = input_shape;
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(Error::shape(format!(
            "spatial dims {h}x{w} are not divisible by pool window {window}"
        )));
    }
    let expected = [n, c, h / window, w / window];
    if upstream.shape() != expected {
        return Err(Error::shape(format!(
            "upstream {:?} does not match pooled shape {expected:?}",
            upstream.shape()
        )));
    }
    let mut grad = Tensor::zeros(input_shape);
    match mode {
        PoolMode::Max => {
            let argmax = argmax
                .filter(|am| am.len() == upstream.len())
                .ok_or_else(|| Error::invalid("max-pool backward needs the forward argmax indices"))?;
            let g = grad.data_mut();
            for (&idx, &u) in argmax.iter().zip(upstream.data()) {
                g[idx] += u;
            }
        }
        PoolMode::Mean => {
            let (ho, wo) = (h / window, w / window);
            let area = (window * window) as f64;
            let up = upstream.data();
            let g = grad.data_mut();
            for plane in 0..n * c {
                for y in 0..h {
                    for x in 0..w {
                        g[(plane * h + y) * w + x] = up[(plane * ho + y / window) * wo + x / window] / area;
                    }
                }
            }
        }
    }
    Ok(grad)
}

/// Stride-1 mean filter over a `window × window` neighbourhood with zero
/// padding; output has the input's spatial dims. Padding cells count toward
/// the divisor, so the operation is a fixed linear map.
pub fn box_mean(input: &Tensor, window: usize) -> Result<Tensor> {
    if window.is_multiple_of(2) {
        return Err(Error::invalid(format!("box window must be odd, got {window}")));
    }
    let [n, c, h, w] = input.shape();
    let r = (window / 2) as isize;
    let area = (window * window) as f64;
    let src = input.data();
    let mut out = Tensor::zeros(input.shape());
    let dst = out.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut s = 0.0;
                for yy in (y - r).max(0)..(y + r + 1).min(h as isize) {
                    let row = base + yy as usize * w;
                    for xx in (x - r).max(0)..(x + r + 1).min(w as isize) {
                        s += src[row + xx as usize];
                    }
                }
                dst[base + y as usize * w + x as usize] = s / area;
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`box_mean`]. The zero-padded box filter is symmetric, so the
/// adjoint is the same filter.
pub fn box_mean_backward(upstream: &Tensor, window: usize) -> Result<Tensor> {
    box_mean(upstream, window)
}
