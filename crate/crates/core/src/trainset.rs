//! Training examples and the deterministic batch schedule that mixes labeled
//! images with negative-only images.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::detect::NoduleMask;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::preprocess::{prepare_input, Image};

/// A preprocessed input with its target mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    /// Equalized, `[0, 1]`-scaled `(1, 1, H, W)` tensor.
    pub input: Tensor,
    pub mask: NoduleMask,
}

impl Example {
    pub fn new(id: impl Into<String>, image: &Image, mask: NoduleMask) -> Result<Self> {
        if (mask.width(), mask.height()) != (image.width(), image.height()) {
            return Err(Error::shape(format!(
                "image {}x{} and mask {}x{} differ",
                image.width(),
                image.height(),
                mask.width(),
                mask.height()
            )));
        }
        Ok(Example {
            id: id.into(),
            input: prepare_input(image),
            mask,
        })
    }

    /// An image whose target is all background.
    pub fn negative(id: impl Into<String>, image: &Image) -> Self {
        Example {
            id: id.into(),
            input: prepare_input(image),
            mask: NoduleMask::empty(image.width(), image.height()),
        }
    }
}

/// Stacks inputs and targets of `examples` into `(N, 1, H, W)` tensors.
pub fn stack_examples(examples: &[&Example]) -> Result<(Tensor, Tensor)> {
    let inputs: Vec<Tensor> = examples.iter().map(|e| e.input.clone()).collect();
    let targets: Vec<Tensor> = examples.iter().map(|e| e.mask.to_tensor()).collect();
    Ok((Tensor::stack(&inputs)?, Tensor::stack(&targets)?))
}

/// Which pool a scheduled example comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pick {
    Labeled(usize),
    Negative(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub labeled: Vec<Example>,
    /// Images with all-zero targets (mined pseudo-negatives or another
    /// negative source).
    pub negatives: Vec<Example>,
    /// Fraction of each batch drawn from `labeled`.
    pub mix_ratio: f64,
    /// Set when negatives were requested but none were available; the set
    /// then trains on labeled data alone.
    pub negatives_missing: bool,
}

impl TrainingSet {
    pub fn labeled_only(labeled: Vec<Example>) -> Self {
        TrainingSet {
            labeled,
            negatives: Vec::new(),
            mix_ratio: 1.0,
            negatives_missing: false,
        }
    }

    pub fn example(&self, pick: Pick) -> &Example {
        match pick {
            Pick::Labeled(i) => &self.labeled[i],
            Pick::Negative(i) => &self.negatives[i],
        }
    }

    /// Labeled and negative slots per batch.
    pub fn batch_split(&self, batch_size: usize) -> (usize, usize) {
        if self.negatives.is_empty() {
            return (batch_size, 0);
        }
        let lab = ((self.mix_ratio * batch_size as f64).round() as usize).clamp(1, batch_size);
        (lab, batch_size - lab)
    }
}

/// Yields epochs of batches. Each epoch visits every labeled example once in
/// a fresh order; negatives are drawn from a reshuffled cycle that carries
/// over between epochs, so all of them get used even when they outnumber
/// the slots of one epoch.
pub struct Batcher<'a> {
    set: &'a TrainingSet,
    batch_size: usize,
    rng: ChaCha8Rng,
    neg_order: Vec<usize>,
    neg_cursor: usize,
}

impl<'a> Batcher<'a> {
    pub fn new(set: &'a TrainingSet, batch_size: usize, rng: ChaCha8Rng) -> Result<Self> {
        if set.labeled.is_empty() {
            return Err(Error::invalid("training set has no labeled examples"));
        }
        if batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(set.mix_ratio > 0.0 && set.mix_ratio <= 1.0) {
            return Err(Error::invalid(format!(
                "mix ratio must lie in (0, 1], got {}",
                set.mix_ratio
            )));
        }
        Ok(Batcher {
            set,
            batch_size,
            rng,
            neg_order: Vec::new(),
            neg_cursor: 0,
        })
    }

    pub fn next_epoch(&mut self) -> Vec<Vec<Pick>> {
        let (n_lab, n_neg) = self.set.batch_split(self.batch_size);
        let mut lab_order: Vec<usize> = (0..self.set.labeled.len()).collect();
        lab_order.shuffle(&mut self.rng);
        lab_order
            .chunks(n_lab)
            .map(|chunk| {
                let mut batch: Vec<Pick> = chunk.iter().map(|&i| Pick::Labeled(i)).collect();
                for _ in 0..n_neg {
                    batch.push(Pick::Negative(self.next_negative()));
                }
                batch
            })
            .collect()
    }

    fn next_negative(&mut self) -> usize {
        if self.neg_cursor == self.neg_order.len() {
            self.neg_order = (0..self.set.negatives.len()).collect();
            self.neg_order.shuffle(&mut self.rng);
            self.neg_cursor = 0;
        }
        self.neg_cursor += 1;
        self.neg_order[self.neg_cursor - 1]
    }
}
