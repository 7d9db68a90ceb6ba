use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use pseudoneg::artifacts::{hash_tree, write_run};
use pseudoneg::checkpoint::Checkpoint;
use pseudoneg::config::ExperimentConfig;
use pseudoneg::detect::{froc_csv, FrocRow};
use pseudoneg::mining::{build_phase2_dataset, mine_pseudo_negatives, read_manifest, write_manifest};
use pseudoneg::model::{build_network, transfer_weights};
use pseudoneg::pipeline::{
    evaluate, run_benchmark, run_cross_validation, train_phase1, train_phase2, CrossValReport, Evaluation, TrainingLog,
};
use pseudoneg::rng::{sha256_hex, substream_seed};
use pseudoneg::synthdata::{generate_dataset, read_dataset, write_dataset, SynthDataset};
use pseudoneg::trainset::Example;

const MANIFEST: &str = "run.json";
const CONFIG_SNAPSHOT: &str = "config.txt";

/// Semi-supervised nodule detection with pseudo-negative mining.
#[derive(Parser)]
#[command(name = "pseudoneg", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (`key = value` lines); defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replace an existing output directory written by an earlier run.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset and write it as PGM files plus a manifest.
    Generate,
    /// Train phase 1 on labeled data, or phase 2 when `--mined` is given.
    Train {
        /// Dataset directory; generated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Phase-1 checkpoint to start phase 2 from.
        #[arg(long, requires = "mined")]
        init: Option<PathBuf>,
        /// Mining manifest listing the pseudo-negatives for phase 2.
        #[arg(long, requires = "init")]
        mined: Option<PathBuf>,
    },
    /// Keep the unlabeled images on which a checkpoint detects nothing.
    Mine {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Overrides `mining_threshold` from the config.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// FROC curve and operating point of a checkpoint on the labeled images.
    Evaluate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// K-fold cross-validation of phase 1 against pseudo-negative phase 2.
    Crossval {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Cross-validation with every negative source in phase 2.
    Compare {
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

impl Command {
    fn inputs(&self) -> Vec<&Path> {
        let paths: [Option<&PathBuf>; 3] = match self {
            Command::Generate => [None, None, None],
            Command::Train { data, init, mined } => [data.as_ref(), init.as_ref(), mined.as_ref()],
            Command::Mine { data, checkpoint, .. } | Command::Evaluate { data, checkpoint } => {
                [data.as_ref(), Some(checkpoint), None]
            }
            Command::Crossval { data } | Command::Compare { data } => [data.as_ref(), None, None],
        };
        paths.into_iter().flatten().map(PathBuf::as_path).collect()
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Train { .. } => "train",
            Command::Mine { .. } => "mine",
            Command::Evaluate { .. } => "evaluate",
            Command::Crossval { .. } => "crossval",
            Command::Compare { .. } => "compare",
        }
    }
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    version: &'static str,
    seed: u64,
    config_sha256: String,
    /// Seconds since the Unix epoch. The only field that differs between
    /// otherwise identical runs.
    created_unix: u64,
    /// Input files (dataset trees expanded) to SHA-256.
    inputs: BTreeMap<String, String>,
    summary: BTreeMap<String, f64>,
    /// Relative path to SHA-256, excluding this manifest.
    files: BTreeMap<String, String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let Cli { common, command } = cli;
    if let Some(n) = common.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::with_seed(0),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    let out = common.out.clone().context("--out is required")?;
    let mut inputs: Vec<&Path> = command.inputs();
    inputs.extend(common.config.as_deref());
    prepare_out_dir(&out, common.force, &inputs)?;
    let result = execute(&cfg, &command, &out, &inputs);
    if result.is_err() {
        // a half-written directory would block later runs, even with --force
        let _ = fs::remove_dir_all(&out);
    }
    result?;
    eprintln!("{}: wrote {}", command.name(), out.display());
    Ok(())
}

fn execute(cfg: &ExperimentConfig, command: &Command, out: &Path, inputs: &[&Path]) -> Result<()> {
    let config_text = cfg.to_text();
    fs::write(out.join(CONFIG_SNAPSHOT), &config_text).with_context(|| format!("writing {}", out.display()))?;

    let summary = match command {
        Command::Generate => generate(cfg, out)?,
        Command::Train { data, init, mined } => train(cfg, out, data.as_deref(), init.as_deref(), mined.as_deref())?,
        Command::Mine {
            data,
            checkpoint,
            threshold,
        } => mine(cfg, out, data.as_deref(), checkpoint, *threshold)?,
        Command::Evaluate { data, checkpoint } => evaluate_cmd(cfg, out, data.as_deref(), checkpoint)?,
        Command::Crossval { data } => crossval(cfg, out, data.as_deref(), false)?,
        Command::Compare { data } => crossval(cfg, out, data.as_deref(), true)?,
    };

    let manifest = RunManifest {
        command: command.name().into(),
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        inputs: hash_inputs(inputs)?,
        summary,
        files: hash_tree(out)?.into_iter().collect(),
    };
    let json = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(out.join(MANIFEST), json).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn hash_inputs(inputs: &[&Path]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for input in inputs {
        if input.is_dir() {
            for (rel, hash) in hash_tree(input)? {
                out.insert(format!("{}/{rel}", input.display()), hash);
            }
        } else {
            let bytes = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
            out.insert(input.display().to_string(), sha256_hex(&bytes));
        }
    }
    Ok(out)
}

/// Refuses to write into a non-empty directory unless `--force` is given,
/// and even then only replaces directories that carry a run manifest and
/// hold none of this run's inputs.
fn prepare_out_dir(out: &Path, force: bool, inputs: &[&Path]) -> Result<()> {
    if out.exists() {
        let root = out
            .canonicalize()
            .with_context(|| format!("resolving {}", out.display()))?;
        for input in inputs {
            if input.canonicalize().is_ok_and(|p| p.starts_with(&root)) {
                bail!(
                    "input {} lies inside the output directory {}",
                    input.display(),
                    out.display()
                );
            }
        }
        let empty = fs::read_dir(out)
            .with_context(|| format!("reading {}", out.display()))?
            .next()
            .is_none();
        if !empty {
            if !force {
                bail!("{} is not empty; pass --force to replace it", out.display());
            }
            if !out.join(MANIFEST).is_file() {
                bail!(
                    "{} has no {MANIFEST}; refusing to replace a directory this tool did not write",
                    out.display()
                );
            }
            fs::remove_dir_all(out).with_context(|| format!("removing {}", out.display()))?;
        }
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn load_data(cfg: &ExperimentConfig, dir: Option<&Path>) -> Result<SynthDataset> {
    Ok(match dir {
        Some(d) => read_dataset(d).with_context(|| format!("reading dataset {}", d.display()))?,
        None => generate_dataset(&cfg.synth)?,
    })
}

fn labeled_examples(data: &SynthDataset) -> Result<Vec<Example>> {
    Ok(data
        .labeled
        .iter()
        .map(|s| Example::new(s.id.clone(), &s.image, s.mask.clone()))
        .collect::<pseudoneg::Result<_>>()?)
}

fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<BTreeMap<String, f64>> {
    let data = generate_dataset(&cfg.synth)?;
    write_dataset(&data, out)?;
    Ok(BTreeMap::from([
        ("labeled".into(), data.labeled.len() as f64),
        ("unlabeled".into(), data.unlabeled.len() as f64),
        ("true_negative".into(), data.true_negatives.len() as f64),
    ]))
}

fn save(out: &Path, stem: &str, ckpt: &Checkpoint, log: &TrainingLog) -> Result<()> {
    ckpt.save(out.join(format!("{stem}.ckpt")))?;
    fs::write(out.join(format!("{stem}_log.csv")), log.to_csv())?;
    Ok(())
}

fn train(
    cfg: &ExperimentConfig,
    out: &Path,
    data: Option<&Path>,
    init: Option<&Path>,
    mined: Option<&Path>,
) -> Result<BTreeMap<String, f64>> {
    let data = load_data(cfg, data)?;
    let labeled = labeled_examples(&data)?;
    let t = &cfg.training;
    let (stem, params, adam, log) = match (init, mined) {
        (Some(init), Some(mined)) => {
            let bytes = fs::read(init).with_context(|| format!("reading {}", init.display()))?;
            let (outcome, hash) = read_manifest(mined)?;
            if hash != sha256_hex(&bytes) {
                bail!(
                    "{} was mined with a different checkpoint than {}",
                    mined.display(),
                    init.display()
                );
            }
            let start = Checkpoint::from_bytes(&bytes)?.params;
            if start.spec() != &t.spec {
                bail!("{} does not match the network in the config", init.display());
            }
            let pool: Vec<_> = data.unlabeled.iter().map(|s| (s.id.as_str(), &s.image)).collect();
            let set = build_phase2_dataset(labeled, &outcome, &pool, t.mix_ratio)?;
            if set.negatives_missing {
                eprintln!("warning: no pseudo-negatives were mined; phase 2 uses labeled data only");
            }
            let (p, a, l) = train_phase2(transfer_weights(&start), &set, t, "batching/phase2")?;
            ("phase2", p, a, l)
        }
        _ => {
            let init = build_network(&t.spec, substream_seed(t.seed, "init"))?;
            let (p, a, l) = train_phase1(init, labeled, t, "batching/phase1")?;
            ("phase1", p, a, l)
        }
    };
    save(
        out,
        stem,
        &Checkpoint {
            params,
            adam: Some(adam),
        },
        &log,
    )?;
    let mut summary = BTreeMap::new();
    if let Some(last) = log.epochs.last() {
        summary.insert("final_loss".into(), last.mean_loss);
    }
    Ok(summary)
}

fn mine(
    cfg: &ExperimentConfig,
    out: &Path,
    data: Option<&Path>,
    checkpoint: &Path,
    threshold: Option<f64>,
) -> Result<BTreeMap<String, f64>> {
    let threshold = threshold
        .or(cfg.training.mining_threshold)
        .context("no mining threshold: pass --threshold or set `mining_threshold` in the config")?;
    let data = load_data(cfg, data)?;
    let bytes = fs::read(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
    let params = Checkpoint::from_bytes(&bytes)?.params;
    let pool: Vec<_> = data.unlabeled.iter().map(|s| (s.id.as_str(), &s.image)).collect();
    let outcome = mine_pseudo_negatives(&params, &pool, threshold)?;
    write_manifest(&out.join("mining.tsv"), &outcome, &sha256_hex(&bytes))?;
    Ok(BTreeMap::from([
        ("threshold".into(), threshold),
        ("pseudo_negative".into(), outcome.pseudo_negative_ids.len() as f64),
        ("discarded".into(), outcome.discarded_ids.len() as f64),
    ]))
}

fn operating_summary(e: &Evaluation) -> BTreeMap<String, f64> {
    let op = &e.operating_point;
    BTreeMap::from([
        ("threshold".into(), op.report.threshold),
        ("sensitivity".into(), op.report.sensitivity),
        ("fp_per_image".into(), op.report.fp_per_image),
        (
            "meets_min_sensitivity".into(),
            f64::from(u8::from(op.meets_min_sensitivity)),
        ),
    ])
}

fn evaluate_cmd(
    cfg: &ExperimentConfig,
    out: &Path,
    data: Option<&Path>,
    checkpoint: &Path,
) -> Result<BTreeMap<String, f64>> {
    let data = load_data(cfg, data)?;
    let params = Checkpoint::load(checkpoint)?.params;
    let t = &cfg.training;
    let eval = evaluate(&params, &labeled_examples(&data)?, &t.thresholds, t.min_sensitivity)?;
    let rows: Vec<_> = eval
        .curve
        .iter()
        .map(|report| FrocRow {
            fold: 0,
            phase: "eval",
            report,
        })
        .collect();
    fs::write(out.join("froc.csv"), froc_csv(&rows))?;
    Ok(operating_summary(&eval))
}

fn crossval(cfg: &ExperimentConfig, out: &Path, data: Option<&Path>, compare: bool) -> Result<BTreeMap<String, f64>> {
    let data = load_data(cfg, data)?;
    let t = &cfg.training;
    let mut summary = BTreeMap::new();
    if compare {
        let (cv, cmp, outcomes) = run_benchmark(&data, t)?;
        write_run(out, &outcomes, Some(&cv), Some(&cmp))?;
        for r in &cmp.rows {
            summary.insert(format!("{}_sensitivity", r.source.label()), r.sensitivity);
            summary.insert(format!("{}_fp_per_image", r.source.label()), r.fp_per_image);
        }
        print!("{}\n{}", cv.to_csv(), cmp.to_csv());
        add_averages(&mut summary, &cv);
    } else {
        let (cv, outcomes) = run_cross_validation(&data, t)?;
        write_run(out, &outcomes, Some(&cv), None)?;
        print!("{}", cv.to_csv());
        add_averages(&mut summary, &cv);
    }
    Ok(summary)
}

fn add_averages(summary: &mut BTreeMap<String, f64>, cv: &CrossValReport) {
    let a = cv.averages;
    summary.insert("phase1_sensitivity".into(), a.phase1_sensitivity);
    summary.insert("phase1_fp_per_image".into(), a.phase1_fp_per_image);
    summary.insert("phase2_sensitivity".into(), a.phase2_sensitivity);
    summary.insert("phase2_fp_per_image".into(), a.phase2_fp_per_image);
}
