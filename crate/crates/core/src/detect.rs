//! From probability maps to scored detections, hit matching and FROC
//! operating points.
//!
//! A detection is an 8-connected component of the thresholded map, scored by
//! its peak probability. It counts as a hit when its centroid, rounded to the
//! nearest pixel, falls inside a ground-truth component. Each ground-truth
//! component absorbs at most one detection; candidates are visited by
//! descending score with ties broken by the lexicographic order of the
//! centroid, and every unmatched detection is a false positive.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{forward, ParameterSet};
use crate::numerics::Tensor;
use crate::preprocess::Image;

/// Images per forward pass during inference.
pub const INFERENCE_BATCH: usize = 16;

/// Binary per-pixel nodule label grid.
#[derive(Clone, PartialEq, Eq)]
pub struct NoduleMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl NoduleMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::shape(format!(
                "{width}x{height} mask needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(NoduleMask { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        NoduleMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    /// Non-zero pixels are set.
    pub fn from_image(img: &Image) -> Self {
        NoduleMask {
            width: img.width(),
            height: img.height(),
            bits: img.pixels().iter().map(|&p| p != 0).collect(),
        }
    }

    /// Set pixels become 255.
    pub fn to_image(&self) -> Image {
        let px = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        Image::new(self.width, self.height, px).expect("mask dims are valid")
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Tensor::new([1, 1, self.height, self.width], data).expect("dims match bit count")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }
}

impl std::fmt::Debug for NoduleMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "NoduleMask({}x{}, {} set)", self.width, self.height, self.count())
    }
}

/// Single-image probability map.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ProbMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::shape(format!(
                "{width}x{height} map needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        Ok(ProbMap { width, height, values })
    }

    /// Batch item `n` of an `(N, 1, H, W)` network output.
    pub fn from_tensor(t: &Tensor, n: usize) -> Result<Self> {
        let [_, c, h, w] = t.shape();
        if c != 1 || n >= t.batch() {
            return Err(Error::shape(format!(
                "cannot take item {n} of {:?} as a probability map",
                t.shape()
            )));
        }
        ProbMap::new(w, h, t.item(n).to_vec())
    }

    /// Mask bits as probabilities 0/1; the "oracle model".
    pub fn from_mask(mask: &NoduleMask) -> Self {
        ProbMap {
            width: mask.width,
            height: mask.height,
            values: mask.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Probability maps for `(1, 1, H, W)` inputs, in input order.
pub fn predict(params: &ParameterSet, inputs: &[&Tensor]) -> Result<Vec<ProbMap>> {
    let chunks: Vec<Vec<ProbMap>> = inputs
        .par_chunks(INFERENCE_BATCH)
        .map(|chunk| {
            let owned: Vec<Tensor> = chunk.iter().map(|&t| t.clone()).collect();
            let out = forward(params, &Tensor::stack(&owned)?)?;
            (0..out.batch()).map(|n| ProbMap::from_tensor(&out, n)).collect()
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// One candidate nodule.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// `(x, y)` pixel coordinates in raster order.
    pub pixels: Vec<(usize, usize)>,
    /// Mean `(x, y)` of the pixel set.
    pub centroid: (f64, f64),
    /// Peak probability inside the component.
    pub score: f64,
}

impl Detection {
    /// Centroid rounded to the nearest pixel (halves round up).
    pub fn rounded_centroid(&self) -> (usize, usize) {
        (self.centroid.0.round() as usize, self.centroid.1.round() as usize)
    }
}

/// Set bit iff `probability > threshold`.
pub fn binarize(prob: &ProbMap, threshold: f64) -> NoduleMask {
    NoduleMask {
        width: prob.width,
        height: prob.height,
        bits: prob.values.iter().map(|&p| p > threshold).collect(),
    }
}

/// 8-connected component labels; 0 is background, components are numbered
/// from 1 in raster order of their first pixel.
pub fn label_components(mask: &NoduleMask) -> (Vec<u32>, u32) {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.bits[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask.bits[j] && labels[j] == 0 {
                        labels[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
    }
    (labels, next)
}

/// Components of `mask`, scored from `prob`, in label order.
pub fn connected_components(mask: &NoduleMask, prob: &ProbMap) -> Result<Vec<Detection>> {
    if (mask.width, mask.height) != (prob.width, prob.height) {
        return Err(Error::shape(format!(
            "mask {}x{} and probability map {}x{} differ",
            mask.width, mask.height, prob.width, prob.height
        )));
    }
    let (labels, count) = label_components(mask);
    let mut dets: Vec<Detection> = (0..count)
        .map(|_| Detection {
            pixels: Vec::new(),
            centroid: (0.0, 0.0),
            score: f64::NEG_INFINITY,
        })
        .collect();
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let d = &mut dets[l as usize - 1];
        d.pixels.push((i % mask.width, i / mask.width));
        d.score = d.score.max(prob.values[i]);
    }
    for d in &mut dets {
        let n = d.pixels.len() as f64;
        let (sx, sy) = d
            .pixels
            .iter()
            .fold((0usize, 0usize), |(ax, ay), &(x, y)| (ax + x, ay + y));
        d.centroid = (sx as f64 / n, sy as f64 / n);
    }
    Ok(dets)
}

/// `connected_components(binarize(prob, threshold))`.
pub fn detect(prob: &ProbMap, threshold: f64) -> Vec<Detection> {
    connected_components(&binarize(prob, threshold), prob).expect("same dims by construction")
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// `(detection index, ground-truth component index)`; component indices
    /// are 0-based in [`label_components`] order.
    pub pairs: Vec<(usize, usize)>,
}

/// Visit order for greedy matching: score descending, then centroid
/// ascending `(x, y)`, then input position.
pub fn match_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&dets[a], &dets[b]);
        db.score
            .total_cmp(&da.score)
            .then(da.centroid.0.total_cmp(&db.centroid.0))
            .then(da.centroid.1.total_cmp(&db.centroid.1))
            .then(a.cmp(&b))
    });
    order
}

pub fn match_detections(dets: &[Detection], gt: &NoduleMask) -> Result<MatchResult> {
    let (labels, count) = label_components(gt);
    let mut taken = vec![false; count as usize];
    let mut result = MatchResult::default();
    for idx in match_order(dets) {
        let (x, y) = dets[idx].rounded_centroid();
        if x >= gt.width || y >= gt.height {
            return Err(Error::shape(format!(
                "detection centroid ({x}, {y}) outside {}x{} ground truth",
                gt.width, gt.height
            )));
        }
        let label = labels[y * gt.width + x];
        if label != 0 && !taken[label as usize - 1] {
            taken[label as usize - 1] = true;
            result.tp += 1;
            result.pairs.push((idx, label as usize - 1));
        } else {
            result.fp += 1;
        }
    }
    result.fn_ = taken.iter().filter(|&&t| !t).count();
    Ok(result)
}

/// Paired predictions and ground truth, iterated in id order.
#[derive(Debug, Clone, Default)]
pub struct FrocDataset {
    cases: Vec<(String, ProbMap, NoduleMask)>,
}

impl FrocDataset {
    /// Pairs the two maps by id; an id present in only one of them is an error.
    pub fn new(predictions: BTreeMap<String, ProbMap>, mut truth: BTreeMap<String, NoduleMask>) -> Result<Self> {
        let mut cases = Vec::with_capacity(predictions.len());
        for (id, prob) in predictions {
            let gt = truth.remove(&id).ok_or_else(|| Error::MissingPair(id.clone()))?;
            if (gt.width, gt.height) != (prob.width, prob.height) {
                return Err(Error::shape(format!(
                    "image `{id}`: prediction {}x{} vs ground truth {}x{}",
                    prob.width, prob.height, gt.width, gt.height
                )));
            }
            cases.push((id, prob, gt));
        }
        if let Some(id) = truth.into_keys().next() {
            return Err(Error::MissingPair(id));
        }
        Ok(FrocDataset { cases })
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn cases(&self) -> &[(String, ProbMap, NoduleMask)] {
        &self.cases
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageCounts {
    pub id: String,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Aggregate detection performance at one threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct FrocReport {
    pub threshold: f64,
    pub per_image: Vec<ImageCounts>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// `ΣTP / (ΣTP + ΣFN)`; 1 when the dataset holds no nodules.
    pub sensitivity: f64,
    /// `ΣFP / image count`; 0 for an empty dataset.
    pub fp_per_image: f64,
}

pub fn froc_point(data: &FrocDataset, threshold: f64) -> Result<FrocReport> {
    let mut per_image = Vec::with_capacity(data.len());
    for (id, prob, gt) in &data.cases {
        let m = match_detections(&detect(prob, threshold), gt)?;
        per_image.push(ImageCounts {
            id: id.clone(),
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
        });
    }
    Ok(summarize(threshold, per_image))
}

fn summarize(threshold: f64, per_image: Vec<ImageCounts>) -> FrocReport {
    let tp: usize = per_image.iter().map(|c| c.tp).sum();
    let fp: usize = per_image.iter().map(|c| c.fp).sum();
    let fn_: usize = per_image.iter().map(|c| c.fn_).sum();
    let sensitivity = if tp + fn_ == 0 {
        1.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let fp_per_image = if per_image.is_empty() {
        0.0
    } else {
        fp as f64 / per_image.len() as f64
    };
    FrocReport {
        threshold,
        per_image,
        tp,
        fp,
        fn_,
        sensitivity,
        fp_per_image,
    }
}

/// `thresholds` must be non-empty and sorted in descending order.
pub fn froc_curve(data: &FrocDataset, thresholds: &[f64]) -> Result<Vec<FrocReport>> {
    if thresholds.is_empty() {
        return Err(Error::invalid("threshold list is empty"));
    }
    if thresholds.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::invalid("thresholds must be sorted in descending order"));
    }
    thresholds.iter().map(|&t| froc_point(data, t)).collect()
}

/// 0.99, 0.98, …, 0.01.
pub fn default_thresholds() -> Vec<f64> {
    (1..=99).rev().map(|i| i as f64 / 100.0).collect()
}

pub const DEFAULT_MIN_SENSITIVITY: f64 = 0.89;

#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub report: FrocReport,
    /// False when no curve point reached the requested sensitivity and the
    /// maximum-sensitivity point was returned instead.
    pub meets_min_sensitivity: bool,
}

/// Fewest false positives per image among points with
/// `sensitivity ≥ min_sensitivity`; ties go to the earlier (higher
/// threshold) point. Falls back to the most sensitive point, flagged.
pub fn select_operating_point(curve: &[FrocReport], min_sensitivity: f64) -> Result<OperatingPoint> {
    if curve.is_empty() {
        return Err(Error::invalid("FROC curve is empty"));
    }
    let mut best: Option<&FrocReport> = None;
    for r in curve.iter().filter(|r| r.sensitivity >= min_sensitivity) {
        if best.is_none_or(|b| r.fp_per_image < b.fp_per_image) {
            best = Some(r);
        }
    }
    if let Some(r) = best {
        return Ok(OperatingPoint {
            report: r.clone(),
            meets_min_sensitivity: true,
        });
    }
    let mut fallback = &curve[0];
    for r in &curve[1..] {
        if r.sensitivity > fallback.sensitivity
            || (r.sensitivity == fallback.sensitivity && r.fp_per_image < fallback.fp_per_image)
        {
            fallback = r;
        }
    }
    Ok(OperatingPoint {
        report: fallback.clone(),
        meets_min_sensitivity: false,
    })
}

/// One row of the FROC CSV export.
#[derive(Debug, Clone)]
pub struct FrocRow<'a> {
    pub fold: usize,
    pub phase: &'a str,
    pub report: &'a FrocReport,
}

pub const FROC_CSV_HEADER: &str = "fold,phase,threshold,sensitivity,fp_per_image";

pub fn froc_csv(rows: &[FrocRow<'_>]) -> String {
    let mut out = String::from(FROC_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.4},{:.6},{:.6}",
            r.fold, r.phase, r.report.threshold, r.report.sensitivity, r.report.fp_per_image
        );
    }
    out
}
