//! 2-d cross-correlation lowered onto a dense matrix product (im2col).

use crate::error::{Error, Result};

use super::Tensor;

/// Gradients produced by [`conv2d_backward`].
#[derive(Debug, Clone)]
pub struct ConvGrads {
    /// `None` when the caller asked to skip the input gradient.
    pub grad_input: Option<Tensor>,
    pub grad_kernels: Tensor,
    pub grad_bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    c_in: usize,
    c_out: usize,
    k: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    padding: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Output spatial extent of a convolution along one axis.
pub fn conv_output_dim(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

fn geometry(input: &Tensor, kernels: &Tensor, stride: usize, padding: usize) -> Result<Geometry> {
    let [_, c_in, h, w] = input.shape();
    let [c_out, kc, kh, kw] = kernels.shape();
    if kh != kw || kh % 2 == 0 {
        return Err(Error::shape(format!(
            "kernel spatial dims must be square and odd, got {kh}x{kw}"
        )));
    }
    if kc != c_in {
        return Err(Error::shape(format!(
            "input has {c_in} channels but kernels expect {kc}"
        )));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    let ho = conv_output_dim(h, kh, stride, padding);
    let wo = conv_output_dim(w, kw, stride, padding);
    match (ho, wo) {
        (Some(ho), Some(wo)) => Ok(Geometry {
            c_in,
            c_out,
            k: kh,
            h,
            w,
            ho,
            wo,
            stride,
            padding,
        }),
        _ => Err(Error::shape(format!(
            "kernel {kh}x{kw} does not fit input {h}x{w} with padding {padding}"
        ))),
    }
}

/// Range of output columns `ox` whose input column `ox·stride + kx − padding`
/// lies inside `0..w`.
fn valid_range(g: &Geometry, kx: usize) -> (usize, usize) {
    let lo = if kx >= g.padding {
        0
    } else {
        (g.padding - kx).div_ceil(g.stride)
    };
    // largest ox with ox·stride + kx − padding ≤ w − 1
    let hi = if g.w + g.padding > kx {
        ((g.w + g.padding - kx - 1) / g.stride + 1).min(g.wo)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Target number of output pixels per band; keeps the column buffer of one
/// band cache-resident.
const BAND_PIXELS: usize = 128;

/// Output-row bands `[oy0, oy1)` covering `0..ho`.
fn bands(g: &Geometry) -> impl Iterator<Item = (usize, usize)> {
    let step = (BAND_PIXELS / g.wo).max(1);
    let ho = g.ho;
    (0..ho).step_by(step).map(move |oy0| (oy0, (oy0 + step).min(ho)))
}

/// Column matrix of output rows `oy0..oy1`, laid out `rows × ((oy1 − oy0)·wo)`.
fn im2col(g: &Geometry, src: &[f64], (oy0, oy1): (usize, usize), cols: &mut [f64]) {
    let p = (oy1 - oy0) * g.wo;
    let mut row = 0;
    for ci in 0..g.c_in {
        let plane = &src[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let (lo, hi) = valid_range(g, kx);
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in oy0..oy1 {
                    let out_row = &mut dst[(oy - oy0) * g.wo..(oy - oy0 + 1) * g.wo];
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out_row[..lo].fill(0.0);
                    out_row[hi..].fill(0.0);
                    if g.stride == 1 {
                        let start = lo + kx - g.padding;
                        out_row[lo..hi].copy_from_slice(&src_row[start..start + (hi - lo)]);
                    } else {
                        for (ox, v) in (lo..hi).zip(&mut out_row[lo..hi]) {
                            *v = src_row[ox * g.stride + kx - g.padding];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`] for one band: accumulates into `dst`.
fn col2im(g: &Geometry, cols: &[f64], (oy0, oy1): (usize, usize), dst: &mut [f64]) {
    let p = (oy1 - oy0) * g.wo;
    let mut row = 0;
    for ci in 0..g.c_in {
        let plane = &mut dst[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let (lo, hi) = valid_range(g, kx);
                let src = &cols[row * p..(row + 1) * p];
                for oy in oy0..oy1 {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let src_row = &src[(oy - oy0) * g.wo..(oy - oy0 + 1) * g.wo];
                    if g.stride == 1 {
                        let start = lo + kx - g.padding;
                        for (d, &v) in dst_row[start..start + (hi - lo)].iter_mut().zip(&src_row[lo..hi]) {
                            *d += v;
                        }
                    } else {
                        for ox in lo..hi {
                            dst_row[ox * g.stride + kx - g.padding] += src_row[ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Strided view of a row-major-ish matrix operand: `(data, row stride, column stride)`.
type View<'a> = (&'a [f64], usize, usize);

/// `c = a (m×k) · b (k×n) + beta · c`, where `c` has row stride `rsc` and
/// unit column stride.
#[allow(clippy::too_many_arguments)] // mirrors the BLAS signature
fn gemm(m: usize, k: usize, n: usize, a: View<'_>, b: View<'_>, beta: f64, c: &mut [f64], rsc: usize) {
    if m == 0 || n == 0 {
        return;
    }
    let (a, rsa, csa) = a;
    let (b, rsb, csb) = b;
    assert!(c.len() > (m - 1) * rsc + n - 1);
    if k == 0 {
        for r in 0..m {
            c[r * rsc..r * rsc + n].iter_mut().for_each(|v| *v *= beta);
        }
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the asserted extents keep every strided access in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Cross-correlation of `input` (N, C_in, H, W) with `kernels` (C_out, C_in, K, K).
pub fn conv2d(input: &Tensor, kernels: &Tensor, bias: &[f64], stride: usize, padding: usize) -> Result<Tensor> {
    let g = geometry(input, kernels, stride, padding)?;
    if bias.len() != g.c_out {
        return Err(Error::shape(format!(
            "bias has {} entries for {} output channels",
            bias.len(),
            g.c_out
        )));
    }
    let n = input.batch();
    let (rows, p) = (g.rows(), g.cols());
    let w = (kernels.data(), rows, 1);
    let mut out = Tensor::zeros([n, g.c_out, g.ho, g.wo]);
    let mut cols = Vec::new();
    for i in 0..n {
        let dst = out.item_mut(i);
        for (co, &b) in bias.iter().enumerate() {
            dst[co * p..(co + 1) * p].fill(b);
        }
        if g.is_pointwise() {
            gemm(g.c_out, rows, p, w, (input.item(i), p, 1), 1.0, dst, p);
            continue;
        }
        for band in bands(&g) {
            let bp = (band.1 - band.0) * g.wo;
            cols.resize(rows * bp, 0.0);
            im2col(&g, input.item(i), band, &mut cols);
            gemm(g.c_out, rows, bp, w, (&cols, bp, 1), 1.0, &mut dst[band.0 * g.wo..], p);
        }
    }
    Ok(out)
}

/// Exact gradients of `Σ upstream ⊙ conv2d(input, kernels, ·)`.
///
/// Skipping the input gradient saves one matrix product per batch item; the
/// network does this for its first layer.
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    upstream: &Tensor,
    stride: usize,
    padding: usize,
    need_input_grad: bool,
) -> Result<ConvGrads> {
    let g = geometry(input, kernels, stride, padding)?;
    let n = input.batch();
    let expected = [n, g.c_out, g.ho, g.wo];
    if upstream.shape() != expected {
        return Err(Error::shape(format!(
            "upstream gradient {:?} does not match conv output {expected:?}",
            upstream.shape()
        )));
    }
    let (rows, p) = (g.rows(), g.cols());
    let wt = (kernels.data(), 1, rows);
    let mut grad_kernels = Tensor::zeros(kernels.shape());
    let mut grad_bias = vec![0.0; g.c_out];
    let mut grad_input = need_input_grad.then(|| Tensor::zeros(input.shape()));
    let mut cols = Vec::new();
    let mut dcols = Vec::new();

    for i in 0..n {
        let dy = upstream.item(i);
        for (co, gb) in grad_bias.iter_mut().enumerate() {
            *gb += dy[co * p..(co + 1) * p].iter().sum::<f64>();
        }
        if g.is_pointwise() {
            let x = input.item(i);
            // dW += dY · Xᵀ
            gemm(
                g.c_out,
                p,
                rows,
                (dy, p, 1),
                (x, 1, p),
                1.0,
                grad_kernels.data_mut(),
                rows,
            );
            if let Some(gi) = grad_input.as_mut() {
                // dX = Wᵀ · dY
                gemm(rows, g.c_out, p, wt, (dy, p, 1), 0.0, gi.item_mut(i), p);
            }
            continue;
        }
        for band in bands(&g) {
            let bp = (band.1 - band.0) * g.wo;
            let dy_band = &dy[band.0 * g.wo..];
            cols.resize(rows * bp, 0.0);
            im2col(&g, input.item(i), band, &mut cols);
            // dW += dY · colsᵀ
            gemm(
                g.c_out,
                bp,
                rows,
                (dy_band, p, 1),
                (&cols, 1, bp),
                1.0,
                grad_kernels.data_mut(),
                rows,
            );
            if let Some(gi) = grad_input.as_mut() {
                // dcols = Wᵀ · dY
                dcols.resize(rows * bp, 0.0);
                gemm(rows, g.c_out, bp, wt, (dy_band, p, 1), 0.0, &mut dcols, bp);
                col2im(&g, &dcols, band, gi.item_mut(i));
            }
        }
    }
    Ok(ConvGrads {
        grad_input,
        grad_kernels,
        grad_bias,
    })
}
