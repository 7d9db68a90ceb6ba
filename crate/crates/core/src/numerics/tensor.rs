use std::fmt;

use crate::error::{Error, Result};

/// Dense 4-d tensor in NCHW order, row-major.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {len} elements but {} were supplied",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: [usize; 4], value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> f64) -> Self {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(n * c * h * w);
        for i in 0..n {
            for j in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f([i, j, y, x]));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.shape[3]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, ch, h, w] = self.shape;
        ((n * ch + c) * h + y) * w + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: f64) {
        let i = self.index(n, c, y, x);
        self.data[i] = value;
    }

    /// Contiguous slice holding every channel of batch item `n`.
    pub fn item(&self, n: usize) -> &[f64] {
        let stride = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[n * stride..(n + 1) * stride]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f64] {
        let stride = self.shape[1] * self.shape[2] * self.shape[3];
        &mut self.data[n * stride..(n + 1) * stride]
    }

    /// Copies batch item `n` into a new single-item tensor.
    pub fn slice_item(&self, n: usize) -> Tensor {
        let [_, c, h, w] = self.shape;
        Tensor {
            shape: [1, c, h, w],
            data: self.item(n).to_vec(),
        }
    }

    /// Stacks single-item tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("cannot stack an empty list"))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(items.iter().map(Tensor::len).sum());
        let mut n = 0;
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                return Err(Error::shape(format!(
                    "cannot stack {:?} with {:?}",
                    t.shape, first.shape
                )));
            }
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: [n, c, h, w],
            data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, a: f64) -> Tensor {
        self.map(|v| v * a)
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "cannot add {:?} to {:?}",
                other.shape, self.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}
