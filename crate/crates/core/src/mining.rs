//! Pseudo-negative mining: keep the unlabeled images on which the trained
//! model detects nothing, discard the rest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::detect::{detect, predict};
use crate::error::{Error, Result};
use crate::model::ParameterSet;
use crate::numerics::Tensor;
use crate::preprocess::{prepare_input, Image};
use crate::trainset::{Example, TrainingSet};

#[derive(Debug, Clone, PartialEq)]
pub struct MiningOutcome {
    /// In pool order.
    pub pseudo_negative_ids: Vec<String>,
    /// In pool order.
    pub discarded_ids: Vec<String>,
    pub mining_threshold: f64,
    pub detection_counts: BTreeMap<String, usize>,
}

impl MiningOutcome {
    pub fn pool_size(&self) -> usize {
        self.pseudo_negative_ids.len() + self.discarded_ids.len()
    }
}

/// Runs the model over `pool` (raw images; preprocessing happens here) and
/// splits it by whether any component survives `threshold`.
pub fn mine_pseudo_negatives(params: &ParameterSet, pool: &[(&str, &Image)], threshold: f64) -> Result<MiningOutcome> {
    let inputs: Vec<Tensor> = pool.iter().map(|(_, img)| prepare_input(img)).collect();
    let refs: Vec<(&str, &Tensor)> = pool.iter().zip(&inputs).map(|((id, _), t)| (*id, t)).collect();
    mine_prepared(params, &refs, threshold)
}

/// As [`mine_pseudo_negatives`] on inputs that are already preprocessed.
pub fn mine_prepared(params: &ParameterSet, pool: &[(&str, &Tensor)], threshold: f64) -> Result<MiningOutcome> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!(
            "mining threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let inputs: Vec<&Tensor> = pool.iter().map(|(_, t)| *t).collect();
    let maps = predict(params, &inputs)?;
    let mut outcome = MiningOutcome {
        pseudo_negative_ids: Vec::new(),
        discarded_ids: Vec::new(),
        mining_threshold: threshold,
        detection_counts: BTreeMap::new(),
    };
    for ((id, _), map) in pool.iter().zip(&maps) {
        let count = detect(map, threshold).len();
        if outcome.detection_counts.insert(id.to_string(), count).is_some() {
            return Err(Error::invalid(format!("duplicate pool id `{id}`")));
        }
        if count == 0 {
            outcome.pseudo_negative_ids.push(id.to_string());
        } else {
            outcome.discarded_ids.push(id.to_string());
        }
    }
    Ok(outcome)
}

/// Pairs the mined images with all-zero targets and mixes them with
/// `labeled` at `mix_ratio`. An empty mined set yields a labeled-only set
/// with [`TrainingSet::negatives_missing`] raised.
pub fn build_phase2_dataset(
    labeled: Vec<Example>,
    mined: &MiningOutcome,
    pool: &[(&str, &Image)],
    mix_ratio: f64,
) -> Result<TrainingSet> {
    if !(mix_ratio > 0.0 && mix_ratio <= 1.0) {
        return Err(Error::invalid(format!("mix ratio must lie in (0, 1], got {mix_ratio}")));
    }
    let by_id: BTreeMap<&str, &Image> = pool.iter().copied().collect();
    let negatives = mined
        .pseudo_negative_ids
        .iter()
        .map(|id| {
            let img = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::invalid(format!("mined id `{id}` is not in the pool")))?;
            Ok(Example::negative(id.clone(), img))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingSet {
        labeled,
        negatives_missing: negatives.is_empty(),
        negatives,
        mix_ratio,
    })
}

const MANIFEST_HEADER: &str = "id\tdetections\tstatus";

/// Text manifest: `key=value` header lines, then one tab-separated row per
/// pool image in id order.
pub fn manifest_text(outcome: &MiningOutcome, checkpoint_sha256: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "threshold={}", outcome.mining_threshold);
    let _ = writeln!(out, "checkpoint_sha256={checkpoint_sha256}");
    let _ = writeln!(out, "pool_size={}", outcome.pool_size());
    let _ = writeln!(out, "pseudo_negative={}", outcome.pseudo_negative_ids.len());
    let _ = writeln!(out, "discarded={}", outcome.discarded_ids.len());
    out.push_str(MANIFEST_HEADER);
    out.push('\n');
    for (id, count) in &outcome.detection_counts {
        let status = if *count == 0 { "pseudo_negative" } else { "discarded" };
        let _ = writeln!(out, "{id}\t{count}\t{status}");
    }
    out
}

/// Parsed manifest: the outcome (ids in id order) and the checkpoint hash.
pub fn parse_manifest(text: &str) -> Result<(MiningOutcome, String)> {
    let mut header = BTreeMap::new();
    let mut lines = text.lines();
    for line in lines.by_ref() {
        if line == MANIFEST_HEADER {
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("mining manifest: bad header line `{line}`")))?;
        header.insert(k, v);
    }
    let field = |k: &str| {
        header
            .get(k)
            .copied()
            .ok_or_else(|| Error::Parse(format!("mining manifest: missing `{k}`")))
    };
    let mining_threshold = field("threshold")?
        .parse()
        .map_err(|_| Error::Parse("mining manifest: bad threshold".into()))?;
    let hash = field("checkpoint_sha256")?.to_string();
    let mut outcome = MiningOutcome {
        pseudo_negative_ids: Vec::new(),
        discarded_ids: Vec::new(),
        mining_threshold,
        detection_counts: BTreeMap::new(),
    };
    for line in lines.filter(|l| !l.is_empty()) {
        let bad = || Error::Parse(format!("mining manifest: bad row `{line}`"));
        let mut cols = line.split('\t');
        let (Some(id), Some(count), Some(_), None) = (cols.next(), cols.next(), cols.next(), cols.next()) else {
            return Err(bad());
        };
        let count: usize = count.parse().map_err(|_| bad())?;
        outcome.detection_counts.insert(id.to_string(), count);
        if count == 0 {
            outcome.pseudo_negative_ids.push(id.to_string());
        } else {
            outcome.discarded_ids.push(id.to_string());
        }
    }
    Ok((outcome, hash))
}

pub fn write_manifest(path: &Path, outcome: &MiningOutcome, checkpoint_sha256: &str) -> Result<()> {
    fs::write(path, manifest_text(outcome, checkpoint_sha256)).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<(MiningOutcome, String)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}
