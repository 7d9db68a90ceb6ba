//! Flat `key = value` experiment configuration.
//!
//! One key per line, `#` starts a comment, blank lines are ignored. Every key
//! is optional except `seed`; unknown keys, duplicates and unparsable values
//! are errors naming the key. The same seed drives data synthesis and
//! training through named substreams.
//!
//! | key | type | default |
//! |---|---|---|
//! | `seed` | integer | required |
//! | `image_size` | integer | 64 |
//! | `n_labeled` | integer | 200 |
//! | `n_unlabeled` | integer | 300 |
//! | `n_true_negative` | integer | 200 |
//! | `positive_rate_in_unlabeled` | real | 0.4 |
//! | `radius_min`, `radius_max` | real | 2.5, 5.0 |
//! | `distractor_density` | real | 3.0 |
//! | `noise_level` | real | 0.05 |
//! | `depth` | integer | 3 |
//! | `base_channels` | integer | 8 |
//! | `inception_levels` | comma list, may be empty | 2,3 |
//! | `epochs_phase1` | integer | 4 |
//! | `epochs_phase2` | integer | 2 |
//! | `batch_size` | integer | 8 |
//! | `learning_rate`, `beta1`, `beta2`, `epsilon` | real | 1e-3, 0.9, 0.999, 1e-8 |
//! | `mining_threshold` | real or `auto` | auto |
//! | `thresholds` | comma list or `default` | default |
//! | `mix_ratio` | real | 0.5 |
//! | `min_sensitivity` | real | 0.89 |
//! | `folds` | integer | 5 |
//!
//! The network input size always equals `image_size`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::detect::default_thresholds;
use crate::error::{Error, Result};
use crate::pipeline::TrainingConfig;
use crate::synthdata::SynthConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub training: TrainingConfig,
}

impl ExperimentConfig {
    /// Defaults everywhere, with the given seed.
    pub fn with_seed(seed: u64) -> Self {
        let mut cfg = ExperimentConfig {
            synth: SynthConfig::default(),
            training: TrainingConfig::default(),
        };
        cfg.set_seed(seed);
        cfg
    }

    pub fn seed(&self) -> u64 {
        self.training.seed
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.training.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.training.validate()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::with_seed(0);
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                field: format!("line {}", n + 1),
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(field_err(key, "given more than once"));
            }
            cfg.apply(key, value)?;
        }
        if !seen.contains("seed") {
            return Err(field_err("seed", "required field is missing"));
        }
        cfg.training.spec.input_size = cfg.synth.image_size;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::parse(&text)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.synth;
        let t = &mut self.training;
        match key {
            "seed" => {
                let seed = num(key, value)?;
                s.seed = seed;
                t.seed = seed;
            }
            "image_size" => s.image_size = num(key, value)?,
            "n_labeled" => s.n_labeled = num(key, value)?,
            "n_unlabeled" => s.n_unlabeled = num(key, value)?,
            "n_true_negative" => s.n_true_negative = num(key, value)?,
            "positive_rate_in_unlabeled" => s.positive_rate_in_unlabeled = num(key, value)?,
            "radius_min" => s.radius_min = num(key, value)?,
            "radius_max" => s.radius_max = num(key, value)?,
            "distractor_density" => s.distractor_density = num(key, value)?,
            "noise_level" => s.noise_level = num(key, value)?,
            "depth" => t.spec.depth = num(key, value)?,
            "base_channels" => t.spec.base_channels = num(key, value)?,
            "inception_levels" => t.spec.inception_levels = list(key, value)?.into_iter().collect(),
            "epochs_phase1" => t.epochs_phase1 = num(key, value)?,
            "epochs_phase2" => t.epochs_phase2 = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "learning_rate" => t.adam.lr = num(key, value)?,
            "beta1" => t.adam.beta1 = num(key, value)?,
            "beta2" => t.adam.beta2 = num(key, value)?,
            "epsilon" => t.adam.eps = num(key, value)?,
            "mining_threshold" => t.mining_threshold = if value == "auto" { None } else { Some(num(key, value)?) },
            "thresholds" => {
                t.thresholds = if value == "default" {
                    default_thresholds()
                } else {
                    list(key, value)?
                }
            }
            "mix_ratio" => t.mix_ratio = num(key, value)?,
            "min_sensitivity" => t.min_sensitivity = num(key, value)?,
            "folds" => t.folds = num(key, value)?,
            _ => return Err(field_err(key, "unknown key")),
        }
        Ok(())
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let s = &self.synth;
        let t = &self.training;
        let join = |v: &mut dyn Iterator<Item = String>| v.collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("seed", t.seed.to_string());
        kv("image_size", s.image_size.to_string());
        kv("n_labeled", s.n_labeled.to_string());
        kv("n_unlabeled", s.n_unlabeled.to_string());
        kv("n_true_negative", s.n_true_negative.to_string());
        kv("positive_rate_in_unlabeled", s.positive_rate_in_unlabeled.to_string());
        kv("radius_min", s.radius_min.to_string());
        kv("radius_max", s.radius_max.to_string());
        kv("distractor_density", s.distractor_density.to_string());
        kv("noise_level", s.noise_level.to_string());
        kv("depth", t.spec.depth.to_string());
        kv("base_channels", t.spec.base_channels.to_string());
        kv(
            "inception_levels",
            join(&mut t.spec.inception_levels.iter().map(ToString::to_string)),
        );
        kv("epochs_phase1", t.epochs_phase1.to_string());
        kv("epochs_phase2", t.epochs_phase2.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("learning_rate", t.adam.lr.to_string());
        kv("beta1", t.adam.beta1.to_string());
        kv("beta2", t.adam.beta2.to_string());
        kv("epsilon", t.adam.eps.to_string());
        kv(
            "mining_threshold",
            t.mining_threshold.map_or("auto".into(), |v| v.to_string()),
        );
        let thresholds = if t.thresholds == default_thresholds() {
            "default".to_string()
        } else {
            join(&mut t.thresholds.iter().map(ToString::to_string))
        };
        kv("thresholds", thresholds);
        kv("mix_ratio", t.mix_ratio.to_string());
        kv("min_sensitivity", t.min_sensitivity.to_string());
        kv("folds", t.folds.to_string());
        out
    }
}

fn field_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| field_err(key, format!("cannot parse `{value}` as {}", std::any::type_name::<T>())))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| num(key, v))
        .collect()
}
