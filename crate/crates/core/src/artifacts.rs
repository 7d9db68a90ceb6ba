//! On-disk layout of a cross-validation run.
//!
//! ```text
//! <dir>/froc.csv                      every fold, phase and threshold
//! <dir>/table1.csv                    phase 1 vs pseudo-negative phase 2
//! <dir>/table2.csv                    one row per negative source
//! <dir>/fold<k>/phase1.ckpt
//! <dir>/fold<k>/phase1_log.csv
//! <dir>/fold<k>/mining.tsv
//! <dir>/fold<k>/phase2_<source>.ckpt
//! <dir>/fold<k>/phase2_<source>_log.csv
//! ```
//!
//! Fold directories are numbered from 1. Nothing written here depends on
//! wall-clock time, so equal runs produce byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::detect::{froc_csv, FrocRow};
use crate::error::{Error, Result};
use crate::mining::manifest_text;
use crate::pipeline::{ComparisonReport, CrossValReport, FoldOutcome, NegativeSource, PhaseRun};
use crate::rng::sha256_hex;

pub fn fold_dir(root: &Path, fold: usize) -> PathBuf {
    root.join(format!("fold{}", fold + 1))
}

/// Phase label used in `froc.csv` for a phase-2 run.
pub fn phase2_label(source: NegativeSource) -> String {
    format!("phase2_{}", source.label())
}

/// FROC curves of every fold: phase 1 first, then each phase-2 source.
pub fn froc_table(outcomes: &[FoldOutcome]) -> String {
    let labels: Vec<Vec<String>> = outcomes
        .iter()
        .map(|o| o.phase2.iter().map(|r| phase2_label(r.source)).collect())
        .collect();
    let mut rows = Vec::new();
    for (o, names) in outcomes.iter().zip(&labels) {
        let fold = o.fold + 1;
        rows.extend(o.phase1.evaluation.curve.iter().map(|report| FrocRow {
            fold,
            phase: "phase1",
            report,
        }));
        for (r, name) in o.phase2.iter().zip(names) {
            rows.extend(r.run.evaluation.curve.iter().map(|report| FrocRow {
                fold,
                phase: name,
                report,
            }));
        }
    }
    froc_csv(&rows)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_phase(dir: &Path, stem: &str, run: &PhaseRun) -> Result<Vec<u8>> {
    let bytes = Checkpoint {
        params: run.params.clone(),
        adam: Some(run.adam.clone()),
    }
    .to_bytes();
    write(&dir.join(format!("{stem}.ckpt")), &bytes)?;
    write(&dir.join(format!("{stem}_log.csv")), run.log.to_csv().as_bytes())?;
    Ok(bytes)
}

/// Writes the per-fold artifacts and the tables under `root`, creating
/// directories as needed. Either report may be omitted.
pub fn write_run(
    root: &Path,
    outcomes: &[FoldOutcome],
    crossval: Option<&CrossValReport>,
    comparison: Option<&ComparisonReport>,
) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for o in outcomes {
        let dir = fold_dir(root, o.fold);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let p1 = write_phase(&dir, "phase1", &o.phase1)?;
        write(
            &dir.join("mining.tsv"),
            manifest_text(&o.mining, &sha256_hex(&p1)).as_bytes(),
        )?;
        for r in &o.phase2 {
            write_phase(&dir, &phase2_label(r.source), &r.run)?;
        }
    }
    write(&root.join("froc.csv"), froc_table(outcomes).as_bytes())?;
    if let Some(cv) = crossval {
        write(&root.join("table1.csv"), cv.to_csv().as_bytes())?;
    }
    if let Some(cmp) = comparison {
        write(&root.join("table2.csv"), cmp.to_csv().as_bytes())?;
    }
    Ok(())
}

/// Relative paths (with `/` separators) and SHA-256 digests of every file
/// under `root`, sorted by path.
pub fn hash_tree(root: &Path) -> Result<Vec<(String, String)>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, String)>) -> Result<()> {
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                let rel = path.strip_prefix(root).unwrap_or(&path);
                let rel = rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                out.push((rel, sha256_hex(&bytes)));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, root, &mut out)?;
    out.sort();
    Ok(out)
}
