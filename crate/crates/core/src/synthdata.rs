//! Deterministic synthetic chest-like images.
//!
//! Backgrounds combine a smooth gradient, curved rib-like bands and pixel
//! noise. Positive images carry one to three Gaussian blobs whose discs form
//! the ground-truth mask. Every image also receives distractors (bright
//! specks and crossing line segments) that are never part of the mask, so a
//! weak detector produces false positives on them.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::detect::NoduleMask;
use crate::error::{Error, Result};
use crate::preprocess::{load_image, save_image, Image};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub image_size: usize,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_true_negative: usize,
    pub positive_rate_in_unlabeled: f64,
    /// Nodule disc radius range in pixels, inclusive.
    pub radius_min: f64,
    pub radius_max: f64,
    /// Expected number of distractors per image.
    pub distractor_density: f64,
    /// Standard deviation of the additive noise, in intensity units of `[0, 1]`.
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_size: 64,
            n_labeled: 200,
            n_unlabeled: 300,
            n_true_negative: 200,
            positive_rate_in_unlabeled: 0.4,
            radius_min: 2.5,
            radius_max: 5.0,
            distractor_density: 3.0,
            noise_level: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |field: &str, message: String| Error::Config {
            field: field.into(),
            message,
        };
        if self.image_size < 8 {
            return Err(cfg_err(
                "image_size",
                format!("must be at least 8, got {}", self.image_size),
            ));
        }
        if !(0.0..=1.0).contains(&self.positive_rate_in_unlabeled) {
            return Err(cfg_err(
                "positive_rate_in_unlabeled",
                format!("must lie in [0, 1], got {}", self.positive_rate_in_unlabeled),
            ));
        }
        if !(self.radius_min >= 1.0 && self.radius_min <= self.radius_max) {
            return Err(cfg_err(
                "radius_min",
                format!(
                    "need 1 <= radius_min <= radius_max, got {} and {}",
                    self.radius_min, self.radius_max
                ),
            ));
        }
        if 2.0 * self.radius_max + 2.0 > self.image_size as f64 {
            return Err(cfg_err(
                "radius_max",
                format!(
                    "a radius-{} nodule does not fit a {}px image",
                    self.radius_max, self.image_size
                ),
            ));
        }
        if !(self.distractor_density >= 0.0 && self.distractor_density.is_finite()) {
            return Err(cfg_err(
                "distractor_density",
                format!("must be >= 0, got {}", self.distractor_density),
            ));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(cfg_err(
                "noise_level",
                format!("must be >= 0, got {}", self.noise_level),
            ));
        }
        Ok(())
    }

    /// Exact number of positives placed in the unlabeled pool.
    pub fn unlabeled_positive_count(&self) -> usize {
        (self.positive_rate_in_unlabeled * self.n_unlabeled as f64).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    Labeled,
    Unlabeled,
    TrueNegative,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Labeled => "labeled",
            Role::Unlabeled => "unlabeled",
            Role::TrueNegative => "true_negative",
        }
    }

    fn parse(s: &str) -> Option<Role> {
        [Role::Labeled, Role::Unlabeled, Role::TrueNegative]
            .into_iter()
            .find(|r| r.as_str() == s)
    }

    fn prefix(self) -> &'static str {
        match self {
            Role::Labeled => "lab",
            Role::Unlabeled => "unl",
            Role::TrueNegative => "neg",
        }
    }
}

/// One image with its mask. For unlabeled and true-negative samples the mask
/// is hidden truth kept for auditing; training code never reads it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub mask: NoduleMask,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SynthDataset {
    pub labeled: Vec<Sample>,
    pub unlabeled: Vec<Sample>,
    pub true_negatives: Vec<Sample>,
}

impl SynthDataset {
    pub fn len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len() + self.true_negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn generate_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut positives = vec![false; cfg.n_unlabeled];
    positives[..cfg.unlabeled_positive_count()]
        .iter_mut()
        .for_each(|p| *p = true);
    positives.shuffle(&mut substream(cfg.seed, "synthesis/unlabeled-roles"));

    let make = |role: Role, i: usize, positive: bool| {
        let id = format!("{}-{i:04}", role.prefix());
        let mut rng = substream(cfg.seed, &format!("synthesis/{id}"));
        let (image, mask) = render(cfg, positive, &mut rng);
        Sample { id, image, mask }
    };
    Ok(SynthDataset {
        labeled: (0..cfg.n_labeled).map(|i| make(Role::Labeled, i, true)).collect(),
        unlabeled: (0..cfg.n_unlabeled)
            .map(|i| make(Role::Unlabeled, i, positives[i]))
            .collect(),
        true_negatives: (0..cfg.n_true_negative)
            .map(|i| make(Role::TrueNegative, i, false))
            .collect(),
    })
}

struct Blob {
    cx: f64,
    cy: f64,
    r: f64,
}

fn render(cfg: &SynthConfig, positive: bool, rng: &mut ChaCha8Rng) -> (Image, NoduleMask) {
    let s = cfg.image_size;
    let sf = s as f64;
    let mut field = vec![0.0f64; s * s];

    // smooth background
    let (gx, gy) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let base = rng.random_range(0.3..0.45);
    let (fx, fy, ph) = (
        rng.random_range(0.5..1.5),
        rng.random_range(0.5..1.5),
        rng.random_range(0.0..2.0 * PI),
    );
    // ribs
    let period = rng.random_range(9.0..14.0);
    let rib_amp = rng.random_range(0.05..0.1);
    let curve = rng.random_range(-1.5..1.5);
    let rib_phase = rng.random_range(0.0..2.0 * PI);
    for y in 0..s {
        for x in 0..s {
            let (u, v) = (x as f64 / sf - 0.5, y as f64 / sf - 0.5);
            let smooth = base + 0.12 * (gx * u + gy * v) + 0.04 * (PI * (fx * u + fy * v) + ph).cos();
            let rib = rib_amp * (2.0 * PI * (y as f64 + curve * u * u * sf) / period + rib_phase).sin();
            field[y * s + x] = smooth + rib;
        }
    }

    let mut mask = NoduleMask::empty(s, s);
    let mut blobs: Vec<Blob> = Vec::new();
    if positive {
        let wanted = rng.random_range(1..=3);
        for _ in 0..wanted {
            for _attempt in 0..100 {
                let r = rng.random_range(cfg.radius_min..=cfg.radius_max);
                let margin = r + 1.0;
                let cx = rng.random_range(margin..sf - margin);
                let cy = rng.random_range(margin..sf - margin);
                let clear = blobs.iter().all(|b| (b.cx - cx).hypot(b.cy - cy) > b.r + r + 3.0);
                if clear {
                    blobs.push(Blob { cx, cy, r });
                    break;
                }
            }
        }
        for b in &blobs {
            let amp = rng.random_range(0.22..0.35);
            let sigma = b.r / 1.5;
            stamp(&mut field, s, b.cx, b.cy, b.r * 2.5, |d2| {
                amp * (-d2 / (2.0 * sigma * sigma)).exp()
            });
            for y in 0..s {
                for x in 0..s {
                    let d2 = (x as f64 - b.cx).powi(2) + (y as f64 - b.cy).powi(2);
                    if d2 <= b.r * b.r {
                        mask.set(x, y, true);
                    }
                }
            }
        }
    }

    let whole = cfg.distractor_density.floor();
    let n_distractors = whole as usize + usize::from(rng.random_bool(cfg.distractor_density - whole));
    for _ in 0..n_distractors {
        // keep distractors off the nodules so the mask stays truthful
        let mut spot = None;
        for _attempt in 0..100 {
            let cx = rng.random_range(2.0..sf - 2.0);
            let cy = rng.random_range(2.0..sf - 2.0);
            if blobs.iter().all(|b| (b.cx - cx).hypot(b.cy - cy) > b.r + 4.0) {
                spot = Some((cx, cy));
                break;
            }
        }
        let Some((cx, cy)) = spot else { continue };
        if rng.random_bool(0.5) {
            let amp = rng.random_range(0.3..0.5);
            let sigma = rng.random_range(0.7..1.2);
            stamp(&mut field, s, cx, cy, 4.0 * sigma, |d2| {
                amp * (-d2 / (2.0 * sigma * sigma)).exp()
            });
        } else {
            let amp = rng.random_range(0.18..0.3);
            let half_len = rng.random_range(5.0..10.0);
            let a1 = rng.random_range(0.0..PI);
            let a2 = a1 + rng.random_range(0.4..(PI - 0.4));
            for angle in [a1, a2] {
                line(&mut field, s, cx, cy, angle, half_len, amp);
            }
        }
    }

    let pixels = field
        .iter()
        .map(|&v| {
            let noisy = v + cfg.noise_level * rng.sample::<f64, _>(StandardNormal);
            (noisy.clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect();
    (Image::new(s, s, pixels).expect("square image"), mask)
}

/// Adds `profile(distance²)` to pixels within `reach` of `(cx, cy)`.
fn stamp(field: &mut [f64], s: usize, cx: f64, cy: f64, reach: f64, profile: impl Fn(f64) -> f64) {
    let lo = |c: f64| (c - reach).floor().max(0.0) as usize;
    let hi = |c: f64| ((c + reach).ceil() as usize).min(s - 1);
    for y in lo(cy)..=hi(cy) {
        for x in lo(cx)..=hi(cx) {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            field[y * s + x] += profile(d2);
        }
    }
}

/// Thin bright segment through `(cx, cy)` with a Gaussian cross-section.
fn line(field: &mut [f64], s: usize, cx: f64, cy: f64, angle: f64, half_len: f64, amp: f64) {
    let (dx, dy) = (angle.cos(), angle.sin());
    let width = 0.7;
    for y in 0..s {
        for x in 0..s {
            let (px, py) = (x as f64 - cx, y as f64 - cy);
            let along = px * dx + py * dy;
            if along.abs() > half_len {
                continue;
            }
            let across = -px * dy + py * dx;
            if across.abs() > 3.0 {
                continue;
            }
            field[y * s + x] += amp * (-(across * across) / (2.0 * width * width)).exp();
        }
    }
}

pub const MANIFEST_FILE: &str = "manifest.tsv";
const MANIFEST_HEADER: &str = "id\trole\timage\tmask";

/// Writes images as PGM under `labeled/`, `unlabeled/` and `true_negative/`.
/// Labeled masks sit next to their images; hidden masks of the other roles go
/// to `audit/`. `manifest.tsv` lists every file.
pub fn write_dataset(data: &SynthDataset, dir: &Path) -> Result<()> {
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    let groups = [
        (Role::Labeled, &data.labeled),
        (Role::Unlabeled, &data.unlabeled),
        (Role::TrueNegative, &data.true_negatives),
    ];
    for (role, samples) in groups {
        let role_dir = role.as_str();
        let mask_dir = if role == Role::Labeled { role_dir } else { "audit" };
        for d in [role_dir, mask_dir] {
            fs::create_dir_all(dir.join(d)).map_err(|e| Error::io(dir.join(d), e))?;
        }
        for s in samples {
            let image = format!("{role_dir}/{}.pgm", s.id);
            let mask = format!("{mask_dir}/{}_mask.pgm", s.id);
            save_image(&s.image, dir.join(&image))?;
            save_image(&s.mask.to_image(), dir.join(&mask))?;
            let _ = writeln!(manifest, "{}\t{}\t{image}\t{mask}", s.id, role.as_str());
        }
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(|e| Error::io(path, e))
}

/// Reads a directory produced by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<SynthDataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(Error::Parse(format!(
            "{}: missing header `{MANIFEST_HEADER}`",
            path.display()
        )));
    }
    let mut by_role: BTreeMap<Role, Vec<Sample>> = BTreeMap::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Parse(format!("{}: malformed line {}", path.display(), n + 2));
        let [id, role, image, mask] = fields[..] else {
            return Err(bad());
        };
        let role = Role::parse(role).ok_or_else(bad)?;
        let image = load_image(dir.join(image))?;
        let mask = NoduleMask::from_image(&load_image(dir.join(mask))?);
        by_role.entry(role).or_default().push(Sample {
            id: id.to_string(),
            image,
            mask,
        });
    }
    let mut take = |r| by_role.remove(&r).unwrap_or_default();
    Ok(SynthDataset {
        labeled: take(Role::Labeled),
        unlabeled: take(Role::Unlabeled),
        true_negatives: take(Role::TrueNegative),
    })
}
