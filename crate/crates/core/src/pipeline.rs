//! Two-phase training, k-fold cross-validation and the negative-source
//! comparison.
//!
//! Per fold: train on the labeled training split, evaluate on the held-out
//! split, mine the unlabeled pool at the phase-1 operating threshold, copy
//! all weights, retrain on labeled plus negatives, evaluate again on the
//! same held-out split. The held-out split serves both to pick the operating
//! threshold and to report it.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::detect::{
    default_thresholds, froc_curve, predict, select_operating_point, FrocDataset, FrocReport, OperatingPoint,
    DEFAULT_MIN_SENSITIVITY,
};
use crate::error::{Error, Result};
use crate::mining::{mine_prepared, MiningOutcome};
use crate::model::{build_network, loss_and_gradients, transfer_weights, NetworkSpec, ParameterSet};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{substream, substream_key, substream_seed};
use crate::synthdata::SynthDataset;
use crate::trainset::{stack_examples, Batcher, Example, TrainingSet};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub spec: NetworkSpec,
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// `None` mines at the phase-1 operating-point threshold.
    pub mining_threshold: Option<f64>,
    /// Evaluation grid, strictly descending, inside `(0, 1)`.
    pub thresholds: Vec<f64>,
    pub mix_ratio: f64,
    pub min_sensitivity: f64,
    pub folds: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            spec: NetworkSpec::default(),
            epochs_phase1: 4,
            epochs_phase2: 2,
            batch_size: 8,
            seed: 0,
            adam: AdamConfig::default(),
            mining_threshold: None,
            thresholds: default_thresholds(),
            mix_ratio: 0.5,
            min_sensitivity: DEFAULT_MIN_SENSITIVITY,
            folds: 5,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |field: &str, message: String| {
            Err(Error::Config {
                field: field.into(),
                message,
            })
        };
        self.spec.validate()?;
        self.adam.validate()?;
        if self.batch_size == 0 {
            return err("batch_size", "must be positive".into());
        }
        if self.folds < 2 {
            return err("folds", format!("need at least 2, got {}", self.folds));
        }
        if !(self.mix_ratio > 0.0 && self.mix_ratio <= 1.0) {
            return err("mix_ratio", format!("must lie in (0, 1], got {}", self.mix_ratio));
        }
        if !(0.0..=1.0).contains(&self.min_sensitivity) {
            return err(
                "min_sensitivity",
                format!("must lie in [0, 1], got {}", self.min_sensitivity),
            );
        }
        if let Some(t) = self.mining_threshold {
            if !(t > 0.0 && t < 1.0) {
                return err("mining_threshold", format!("must lie in (0, 1), got {t}"));
            }
        }
        if self.thresholds.is_empty()
            || self.thresholds.iter().any(|&t| !(t > 0.0 && t < 1.0))
            || self.thresholds.windows(2).any(|w| w[0] <= w[1])
        {
            return err("thresholds", "need a strictly descending list inside (0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub batches: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss,batches\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{:.10},{}", e.epoch, e.mean_loss, e.batches);
        }
        out
    }
}

/// Trains `params` on `set` for `epochs` epochs with a fresh Adam state.
/// The batch order comes from the named substream of `cfg.seed`.
pub fn train(
    mut params: ParameterSet,
    set: &TrainingSet,
    epochs: usize,
    cfg: &TrainingConfig,
    stream: &str,
) -> Result<(ParameterSet, AdamState, TrainingLog)> {
    let mut adam = AdamState::new(&params, cfg.adam)?;
    let mut batcher = Batcher::new(set, cfg.batch_size, substream(cfg.seed, stream))?;
    let mut log = TrainingLog::default();
    for epoch in 1..=epochs {
        let batches = batcher.next_epoch();
        let mut total = 0.0;
        for (b, picks) in batches.iter().enumerate() {
            let examples: Vec<&Example> = picks.iter().map(|&p| set.example(p)).collect();
            let (input, target) = stack_examples(&examples)?;
            let (loss, grads) = loss_and_gradients(&params, &input, &target)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b, loss });
            }
            adam.step(&mut params, &grads)?;
            total += loss;
        }
        log.epochs.push(EpochLog {
            epoch,
            mean_loss: total / batches.len() as f64,
            batches: batches.len(),
        });
    }
    Ok((params, adam, log))
}

pub fn train_phase1(
    init: ParameterSet,
    labeled: Vec<Example>,
    cfg: &TrainingConfig,
    stream: &str,
) -> Result<(ParameterSet, AdamState, TrainingLog)> {
    train(
        init,
        &TrainingSet::labeled_only(labeled),
        cfg.epochs_phase1,
        cfg,
        stream,
    )
}

pub fn train_phase2(
    transferred: ParameterSet,
    set: &TrainingSet,
    cfg: &TrainingConfig,
    stream: &str,
) -> Result<(ParameterSet, AdamState, TrainingLog)> {
    train(transferred, set, cfg.epochs_phase2, cfg, stream)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub curve: Vec<FrocReport>,
    pub operating_point: OperatingPoint,
}

pub fn evaluate(
    params: &ParameterSet,
    test: &[Example],
    thresholds: &[f64],
    min_sensitivity: f64,
) -> Result<Evaluation> {
    let inputs: Vec<_> = test.iter().map(|e| &e.input).collect();
    let maps = predict(params, &inputs)?;
    let mut preds = BTreeMap::new();
    let mut truth = BTreeMap::new();
    for (e, m) in test.iter().zip(maps) {
        if preds.insert(e.id.clone(), m).is_some() {
            return Err(Error::invalid(format!("duplicate test id `{}`", e.id)));
        }
        truth.insert(e.id.clone(), e.mask.clone());
    }
    let curve = froc_curve(&FrocDataset::new(preds, truth)?, thresholds)?;
    let operating_point = select_operating_point(&curve, min_sensitivity)?;
    Ok(Evaluation { curve, operating_point })
}

/// Fold index for each id, in input order. Ids are ranked by a seeded hash
/// and dealt round-robin, so the assignment does not depend on input order
/// and fold sizes differ by at most one.
pub fn assign_folds(ids: &[&str], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    if k > ids.len() {
        return Err(Error::invalid(format!("{k} folds requested for {} items", ids.len())));
    }
    let mut ranked: Vec<([u8; 32], usize)> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (substream_key(seed, &format!("folds/{id}")), i))
        .collect();
    ranked.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| ids[a.1].cmp(ids[b.1])));
    let mut folds = vec![0; ids.len()];
    for (rank, &(_, i)) in ranked.iter().enumerate() {
        folds[i] = rank % k;
    }
    Ok(folds)
}

/// Negative pools available to phase 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NegativeSource {
    /// Verified nodule-free images.
    Approved,
    /// Unlabeled images the phase-1 model finds nothing in.
    PseudoNegative,
    /// The whole unlabeled pool, unfiltered, with all-zero targets.
    Unlabeled,
}

impl NegativeSource {
    pub const ALL: [NegativeSource; 3] = [
        NegativeSource::Approved,
        NegativeSource::PseudoNegative,
        NegativeSource::Unlabeled,
    ];

    pub fn label(self) -> &'static str {
        match self {
            NegativeSource::Approved => "approved",
            NegativeSource::PseudoNegative => "pseudonegative",
            NegativeSource::Unlabeled => "unlabeled",
        }
    }
}

/// Images preprocessed once and shared by all folds.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub labeled: Vec<Example>,
    /// All-zero targets; hidden truth is dropped here.
    pub unlabeled: Vec<Example>,
    pub true_negatives: Vec<Example>,
}

impl PreparedData {
    pub fn new(data: &SynthDataset) -> Result<Self> {
        Ok(PreparedData {
            labeled: data
                .labeled
                .iter()
                .map(|s| Example::new(s.id.clone(), &s.image, s.mask.clone()))
                .collect::<Result<_>>()?,
            unlabeled: data
                .unlabeled
                .iter()
                .map(|s| Example::negative(s.id.clone(), &s.image))
                .collect(),
            true_negatives: data
                .true_negatives
                .iter()
                .map(|s| Example::negative(s.id.clone(), &s.image))
                .collect(),
        })
    }

    fn pool(&self, source: NegativeSource, mined: &MiningOutcome) -> Vec<Example> {
        match source {
            NegativeSource::Approved => self.true_negatives.clone(),
            NegativeSource::Unlabeled => self.unlabeled.clone(),
            NegativeSource::PseudoNegative => {
                let keep: std::collections::BTreeSet<&str> =
                    mined.pseudo_negative_ids.iter().map(String::as_str).collect();
                self.unlabeled
                    .iter()
                    .filter(|e| keep.contains(e.id.as_str()))
                    .cloned()
                    .collect()
            }
        }
    }

    fn has_source(&self, source: NegativeSource) -> bool {
        match source {
            NegativeSource::Approved => !self.true_negatives.is_empty(),
            NegativeSource::PseudoNegative | NegativeSource::Unlabeled => !self.unlabeled.is_empty(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhaseRun {
    pub params: ParameterSet,
    /// Optimizer state at the end of training.
    pub adam: AdamState,
    pub log: TrainingLog,
    pub evaluation: Evaluation,
}

#[derive(Debug, Clone)]
pub struct SourceRun {
    pub source: NegativeSource,
    pub run: PhaseRun,
    pub negatives_used: usize,
    pub negatives_missing: bool,
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    /// 0-based.
    pub fold: usize,
    pub test_ids: Vec<String>,
    pub phase1: PhaseRun,
    pub mining: MiningOutcome,
    pub phase2: Vec<SourceRun>,
}

impl FoldOutcome {
    pub fn source(&self, s: NegativeSource) -> Option<&SourceRun> {
        self.phase2.iter().find(|r| r.source == s)
    }
}

/// One fold: phase 1, mining, then one phase-2 run per requested source,
/// all starting from the same phase-1 weights and batch stream.
pub fn run_fold(
    data: &PreparedData,
    cfg: &TrainingConfig,
    fold: usize,
    assignment: &[usize],
    sources: &[NegativeSource],
) -> Result<FoldOutcome> {
    let mut test = Vec::new();
    let mut train_split = Vec::new();
    for (e, &f) in data.labeled.iter().zip(assignment) {
        if f == fold {
            test.push(e.clone());
        } else {
            train_split.push(e.clone());
        }
    }
    if train_split.is_empty() {
        return Err(Error::invalid(format!("fold {fold} leaves no training data")));
    }

    let init = build_network(&cfg.spec, substream_seed(cfg.seed, &format!("init/fold{fold}")))?;
    let (p1, adam1, log1) = train_phase1(init, train_split.clone(), cfg, &format!("batching/phase1/fold{fold}"))?;
    let eval1 = evaluate(&p1, &test, &cfg.thresholds, cfg.min_sensitivity)?;

    let threshold = cfg.mining_threshold.unwrap_or(eval1.operating_point.report.threshold);
    let pool: Vec<(&str, _)> = data.unlabeled.iter().map(|e| (e.id.as_str(), &e.input)).collect();
    let mining = mine_prepared(&p1, &pool, threshold)?;

    let mut phase2 = Vec::new();
    for &source in sources {
        if !data.has_source(source) {
            continue;
        }
        let negatives = data.pool(source, &mining);
        let set = TrainingSet {
            labeled: train_split.clone(),
            negatives_missing: negatives.is_empty(),
            negatives,
            mix_ratio: cfg.mix_ratio,
        };
        let stream = format!("batching/phase2/fold{fold}");
        let (p2, adam2, log2) = train_phase2(transfer_weights(&p1), &set, cfg, &stream)?;
        let eval2 = evaluate(&p2, &test, &cfg.thresholds, cfg.min_sensitivity)?;
        phase2.push(SourceRun {
            source,
            run: PhaseRun {
                params: p2,
                adam: adam2,
                log: log2,
                evaluation: eval2,
            },
            negatives_used: set.negatives.len(),
            negatives_missing: set.negatives_missing,
        });
    }
    Ok(FoldOutcome {
        fold,
        test_ids: test.iter().map(|e| e.id.clone()).collect(),
        phase1: PhaseRun {
            params: p1,
            adam: adam1,
            log: log1,
            evaluation: eval1,
        },
        mining,
        phase2,
    })
}

/// Runs every fold (concurrently when threads are available); outcomes are
/// returned in fold order.
pub fn run_folds(data: &SynthDataset, cfg: &TrainingConfig, sources: &[NegativeSource]) -> Result<Vec<FoldOutcome>> {
    cfg.validate()?;
    if data.labeled.len() < cfg.folds {
        return Err(Error::invalid(format!(
            "{} folds requested for {} labeled images",
            cfg.folds,
            data.labeled.len()
        )));
    }
    let prepared = PreparedData::new(data)?;
    let ids: Vec<&str> = data.labeled.iter().map(|s| s.id.as_str()).collect();
    let assignment = assign_folds(&ids, cfg.folds, cfg.seed)?;
    (0..cfg.folds)
        .into_par_iter()
        .map(|f| run_fold(&prepared, cfg, f, &assignment, sources))
        .collect()
}

/// Phase-1 and phase-2 operating points of one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    /// 0-based.
    pub fold: usize,
    pub phase1: OperatingPoint,
    pub phase2: OperatingPoint,
    pub delta_sensitivity: f64,
    pub delta_fp_per_image: f64,
}

impl FoldReport {
    pub fn new(fold: usize, phase1: OperatingPoint, phase2: OperatingPoint) -> Self {
        FoldReport {
            fold,
            delta_sensitivity: phase2.report.sensitivity - phase1.report.sensitivity,
            delta_fp_per_image: phase2.report.fp_per_image - phase1.report.fp_per_image,
            phase1,
            phase2,
        }
    }
}

/// Unweighted means over folds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Averages {
    pub phase1_sensitivity: f64,
    pub phase1_fp_per_image: f64,
    pub phase2_sensitivity: f64,
    pub phase2_fp_per_image: f64,
    pub delta_sensitivity: f64,
    pub delta_fp_per_image: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValReport {
    pub folds: Vec<FoldReport>,
    pub averages: Averages,
}

pub const TABLE1_HEADER: &str = "fold,phase1_sensitivity,phase1_fp_per_image,phase2_sensitivity,phase2_fp_per_image,diff_sensitivity,diff_fp_per_image";

impl CrossValReport {
    pub fn from_folds(folds: Vec<FoldReport>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::invalid("no folds to average"));
        }
        let mean = |f: &dyn Fn(&FoldReport) -> f64| folds.iter().map(f).sum::<f64>() / folds.len() as f64;
        let averages = Averages {
            phase1_sensitivity: mean(&|r| r.phase1.report.sensitivity),
            phase1_fp_per_image: mean(&|r| r.phase1.report.fp_per_image),
            phase2_sensitivity: mean(&|r| r.phase2.report.sensitivity),
            phase2_fp_per_image: mean(&|r| r.phase2.report.fp_per_image),
            delta_sensitivity: mean(&|r| r.delta_sensitivity),
            delta_fp_per_image: mean(&|r| r.delta_fp_per_image),
        };
        Ok(CrossValReport { folds, averages })
    }

    /// Phase 2 is the pseudo-negative run.
    pub fn from_outcomes(outcomes: &[FoldOutcome]) -> Result<Self> {
        let folds = outcomes
            .iter()
            .map(|o| {
                let p2 = o
                    .source(NegativeSource::PseudoNegative)
                    .ok_or_else(|| Error::invalid(format!("fold {} has no pseudo-negative phase-2 run", o.fold)))?;
                Ok(FoldReport::new(
                    o.fold,
                    o.phase1.evaluation.operating_point.clone(),
                    p2.run.evaluation.operating_point.clone(),
                ))
            })
            .collect::<Result<_>>()?;
        CrossValReport::from_folds(folds)
    }

    /// One row per fold (numbered from 1) and a final `Avg` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TABLE1_HEADER);
        out.push('\n');
        let row = |out: &mut String, label: &str, v: [f64; 6]| {
            let _ = writeln!(
                out,
                "{label},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                v[0], v[1], v[2], v[3], v[4], v[5]
            );
        };
        for f in &self.folds {
            let v = [
                f.phase1.report.sensitivity,
                f.phase1.report.fp_per_image,
                f.phase2.report.sensitivity,
                f.phase2.report.fp_per_image,
                f.delta_sensitivity,
                f.delta_fp_per_image,
            ];
            row(&mut out, &(f.fold + 1).to_string(), v);
        }
        let a = self.averages;
        let v = [
            a.phase1_sensitivity,
            a.phase1_fp_per_image,
            a.phase2_sensitivity,
            a.phase2_fp_per_image,
            a.delta_sensitivity,
            a.delta_fp_per_image,
        ];
        row(&mut out, "Avg", v);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub source: NegativeSource,
    /// Fold means of the operating-point values.
    pub sensitivity: f64,
    pub fp_per_image: f64,
    /// Some fold ran without any negatives from this source.
    pub negatives_missing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    /// Requested sources with no pool; their rows are omitted.
    pub missing: Vec<NegativeSource>,
}

pub const TABLE2_HEADER: &str = "source,sensitivity,fp_per_scan";

impl ComparisonReport {
    pub fn from_outcomes(outcomes: &[FoldOutcome], sources: &[NegativeSource]) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::invalid("no folds to compare"));
        }
        let mut rows = Vec::new();
        let mut missing = Vec::new();
        for &source in sources {
            let runs: Vec<&SourceRun> = outcomes.iter().filter_map(|o| o.source(source)).collect();
            if runs.len() != outcomes.len() {
                missing.push(source);
                continue;
            }
            let n = runs.len() as f64;
            rows.push(ComparisonRow {
                source,
                sensitivity: runs
                    .iter()
                    .map(|r| r.run.evaluation.operating_point.report.sensitivity)
                    .sum::<f64>()
                    / n,
                fp_per_image: runs
                    .iter()
                    .map(|r| r.run.evaluation.operating_point.report.fp_per_image)
                    .sum::<f64>()
                    / n,
                negatives_missing: runs.iter().any(|r| r.negatives_missing),
            });
        }
        Ok(ComparisonReport { rows, missing })
    }

    pub fn row(&self, source: NegativeSource) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.source == source)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TABLE2_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{},{:.6},{:.6}", r.source.label(), r.sensitivity, r.fp_per_image);
        }
        out
    }
}

pub fn run_cross_validation(data: &SynthDataset, cfg: &TrainingConfig) -> Result<(CrossValReport, Vec<FoldOutcome>)> {
    let outcomes = run_folds(data, cfg, &[NegativeSource::PseudoNegative])?;
    Ok((CrossValReport::from_outcomes(&outcomes)?, outcomes))
}

pub fn compare_negative_sources(
    data: &SynthDataset,
    cfg: &TrainingConfig,
) -> Result<(ComparisonReport, Vec<FoldOutcome>)> {
    let outcomes = run_folds(data, cfg, &NegativeSource::ALL)?;
    Ok((
        ComparisonReport::from_outcomes(&outcomes, &NegativeSource::ALL)?,
        outcomes,
    ))
}

/// Cross-validation and comparison from one shared set of fold runs.
pub fn run_benchmark(
    data: &SynthDataset,
    cfg: &TrainingConfig,
) -> Result<(CrossValReport, ComparisonReport, Vec<FoldOutcome>)> {
    let outcomes = run_folds(data, cfg, &NegativeSource::ALL)?;
    Ok((
        CrossValReport::from_outcomes(&outcomes)?,
        ComparisonReport::from_outcomes(&outcomes, &NegativeSource::ALL)?,
        outcomes,
    ))
}
