//! Acceptance checks. Prints one `PASS`/`FAIL` line per criterion and a
//! summary line. With `PSEUDONEG_STRICT=1` the exit status is non-zero when
//! any criterion fails. Set `PSEUDONEG_SKIP_BENCHMARK=1` to skip the
//! multi-seed training benchmark (the three benchmark criteria, mining on
//! trained models and determinism then report `SKIP`).

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pseudoneg::artifacts::{hash_tree, write_run};
use pseudoneg::detect::{froc_point, FrocDataset, NoduleMask, ProbMap};
use pseudoneg::mining::mine_pseudo_negatives;
use pseudoneg::model::{class_balanced_loss, count_macs, forward, NetworkSpec};
use pseudoneg::numerics::{
    activate, activation_backward, box_mean, box_mean_backward, concat_channels, conv2d, conv2d_backward, grad_check,
    pool2d, pool2d_backward, split_channels, upsample2d, upsample2d_backward, Activation, OpFn, PoolMode, Tensor,
};
use pseudoneg::optim::{adam_update, AdamConfig, AdamState};
use pseudoneg::pipeline::{run_benchmark, run_cross_validation, FoldOutcome, NegativeSource, TrainingConfig};
use pseudoneg::preprocess::{equalize_histogram, Image};
use pseudoneg::synthdata::{generate_dataset, SynthConfig, SynthDataset};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const GRAD_TOL: f64 = 1e-4;
const GRAD_TRIALS: usize = 20;

struct Verdicts {
    failed: usize,
}

impl Verdicts {
    fn report(&mut self, name: &str, pass: bool, detail: impl AsRef<str>) {
        if !pass {
            self.failed += 1;
        }
        println!("{} {name}: {}", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
    }

    fn skip(&self, name: &str) {
        println!("SKIP {name}: benchmark disabled by PSEUDONEG_SKIP_BENCHMARK");
    }
}

fn main() -> ExitCode {
    let mut v = Verdicts { failed: 0 };
    gradients(&mut v);
    adam(&mut v);
    froc_oracle(&mut v);
    equalization(&mut v);
    macs(&mut v);
    mining_on_untrained(&mut v);

    if std::env::var_os("PSEUDONEG_SKIP_BENCHMARK").is_some() {
        for name in [
            "fp-reduction",
            "unrefined-degradation",
            "true-negative-parity",
            "mining-trained",
            "determinism",
        ] {
            v.skip(name);
        }
    } else {
        let runs = benchmark(&mut v);
        mining_on_trained(&mut v, &runs);
        determinism(&mut v);
    }
    if v.failed == 0 {
        println!("all acceptance criteria passed");
        return ExitCode::SUCCESS;
    }
    println!("{} acceptance criteria FAILED", v.failed);
    // failing by default would stop `cargo test` before the remaining suites
    if std::env::var_os("PSEUDONEG_STRICT").is_some() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn rng(name: &str) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    for (i, b) in name.bytes().enumerate() {
        seed[i % 32] ^= b;
    }
    ChaCha8Rng::from_seed(seed)
}

fn random_vec(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

/// Values whose magnitudes stay away from zero, so ReLU kinks are not hit.
fn off_kink(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = r.random_range(0.05..1.5);
            if r.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

/// A permutation of well-separated values, so every pooling window has a
/// unique maximum that finite differences cannot flip.
fn distinct(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - 1.0).collect();
    for i in (1..n).rev() {
        v.swap(i, r.random_range(0..=i));
    }
    v
}

fn tensor(shape: [usize; 4], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

/// Runs `trials` gradient checks; returns the worst error and how many passed.
fn check_kernel(
    name: &str,
    trials: usize,
    mut case: impl FnMut(&mut ChaCha8Rng) -> (f64, bool),
) -> (String, f64, usize) {
    let mut r = rng(name);
    let mut worst: f64 = 0.0;
    let mut passed = 0;
    for _ in 0..trials {
        let (err, ok) = case(&mut r);
        worst = worst.max(err);
        passed += usize::from(ok);
    }
    (name.to_string(), worst, passed)
}

fn gradients(v: &mut Verdicts) {
    let mut results = Vec::new();

    // convolution: gradient wrt input, kernels and bias, over several geometries
    for (k, stride, pad) in [(3, 1, 1), (5, 1, 2), (1, 1, 0), (3, 2, 1)] {
        let shape_x = [2, 2, 6, 6];
        let shape_k = [3, 2, k, k];
        let nx: usize = shape_x.iter().product();
        let nk: usize = shape_k.iter().product();
        results.push(check_kernel(
            &format!("conv{k}x{k}/s{stride}/p{pad}"),
            GRAD_TRIALS,
            |r| {
                let x = random_vec(r, nx, -1.0, 1.0);
                let w = random_vec(r, nk, -1.0, 1.0);
                let b = random_vec(r, 3, -0.5, 0.5);
                let probe = conv2d(&tensor(shape_x, &x), &tensor(shape_k, &w), &b, stride, pad).unwrap();
                let up = random_vec(r, probe.len(), -1.0, 1.0);
                let up_t = tensor(probe.shape(), &up);
                let op = OpFn(
                    |p: &[f64]| {
                        let (x, rest) = p.split_at(nx);
                        let (w, b) = rest.split_at(nk);
                        conv2d(&tensor(shape_x, x), &tensor(shape_k, w), b, stride, pad)
                            .unwrap()
                            .into_data()
                    },
                    |p: &[f64], _: &[f64]| {
                        let (x, rest) = p.split_at(nx);
                        let (w, _) = rest.split_at(nk);
                        let g = conv2d_backward(&tensor(shape_x, x), &tensor(shape_k, w), &up_t, stride, pad, true)
                            .unwrap();
                        let mut out = g.grad_input.unwrap().into_data();
                        out.extend(g.grad_kernels.into_data());
                        out.extend(g.grad_bias);
                        out
                    },
                );
                let point: Vec<f64> = x.into_iter().chain(w).chain(b).collect();
                let rep = grad_check(&op, &point, &up, GRAD_TOL);
                (rep.max_rel_error, rep.passed)
            },
        ));
    }

    let shape = [2, 3, 4, 6];
    let n: usize = shape.iter().product();
    for (label, mode) in [("maxpool2", PoolMode::Max), ("meanpool2", PoolMode::Mean)] {
        results.push(check_kernel(label, GRAD_TRIALS, |r| {
            let x = distinct(r, n);
            let up = random_vec(r, n / 4, -1.0, 1.0);
            let up_t = tensor([2, 3, 2, 3], &up);
            let op = OpFn(
                |p: &[f64]| pool2d(&tensor(shape, p), 2, mode).unwrap().output.into_data(),
                |p: &[f64], _: &[f64]| {
                    let pooled = pool2d(&tensor(shape, p), 2, mode).unwrap();
                    pool2d_backward(shape, 2, mode, pooled.argmax.as_deref(), &up_t)
                        .unwrap()
                        .into_data()
                },
            );
            let rep = grad_check(&op, &x, &up, GRAD_TOL);
            (rep.max_rel_error, rep.passed)
        }));
    }

    results.push(check_kernel("box_mean3", GRAD_TRIALS, |r| {
        let x = random_vec(r, n, -1.0, 1.0);
        let up = random_vec(r, n, -1.0, 1.0);
        let up_t = tensor(shape, &up);
        let op = OpFn(
            |p: &[f64]| box_mean(&tensor(shape, p), 3).unwrap().into_data(),
            |_: &[f64], _: &[f64]| box_mean_backward(&up_t, 3).unwrap().into_data(),
        );
        let rep = grad_check(&op, &x, &up, GRAD_TOL);
        (rep.max_rel_error, rep.passed)
    }));

    results.push(check_kernel("upsample2", GRAD_TRIALS, |r| {
        let x = random_vec(r, n, -1.0, 1.0);
        let up = random_vec(r, n * 4, -1.0, 1.0);
        let up_t = tensor([2, 3, 8, 12], &up);
        let op = OpFn(
            |p: &[f64]| upsample2d(&tensor(shape, p), 2).unwrap().into_data(),
            |_: &[f64], _: &[f64]| upsample2d_backward(&up_t, 2).unwrap().into_data(),
        );
        let rep = grad_check(&op, &x, &up, GRAD_TOL);
        (rep.max_rel_error, rep.passed)
    }));

    for (label, kind) in [("relu", Activation::Relu), ("sigmoid", Activation::Sigmoid)] {
        results.push(check_kernel(label, GRAD_TRIALS, |r| {
            let x = off_kink(r, n);
            let up = random_vec(r, n, -1.0, 1.0);
            let up_t = tensor(shape, &up);
            let op = OpFn(
                |p: &[f64]| activate(&tensor(shape, p), kind).into_data(),
                |p: &[f64], _: &[f64]| {
                    let x = tensor(shape, p);
                    let y = activate(&x, kind);
                    activation_backward(kind, &x, &y, &up_t).unwrap().into_data()
                },
            );
            let rep = grad_check(&op, &x, &up, GRAD_TOL);
            (rep.max_rel_error, rep.passed)
        }));
    }

    results.push(check_kernel("concat", GRAD_TRIALS, |r| {
        let (sa, sb) = ([1, 2, 3, 3], [1, 3, 3, 3]);
        let x = random_vec(r, 45, -1.0, 1.0);
        let up = random_vec(r, 45, -1.0, 1.0);
        let up_t = tensor([1, 5, 3, 3], &up);
        let op = OpFn(
            |p: &[f64]| {
                concat_channels(&[&tensor(sa, &p[..18]), &tensor(sb, &p[18..])])
                    .unwrap()
                    .into_data()
            },
            |_: &[f64], _: &[f64]| {
                split_channels(&up_t, &[2, 3])
                    .unwrap()
                    .into_iter()
                    .flat_map(Tensor::into_data)
                    .collect()
            },
        );
        let rep = grad_check(&op, &x, &up, GRAD_TOL);
        (rep.max_rel_error, rep.passed)
    }));

    // the loss, differentiated with respect to the logits
    results.push(check_kernel("class_balanced_loss", GRAD_TRIALS, |r| {
        let shape = [2, 1, 4, 4];
        let logits = random_vec(r, 32, -3.0, 3.0);
        let target: Vec<f64> = (0..32).map(|_| f64::from(u8::from(r.random_bool(0.2)))).collect();
        let t = tensor(shape, &target);
        let probs = |p: &[f64]| activate(&tensor(shape, p), Activation::Sigmoid);
        let op = OpFn(
            |p: &[f64]| vec![class_balanced_loss(&probs(p), &t).unwrap().loss],
            |p: &[f64], u: &[f64]| {
                class_balanced_loss(&probs(p), &t)
                    .unwrap()
                    .grad_logits
                    .data()
                    .iter()
                    .map(|g| g * u[0])
                    .collect()
            },
        );
        let rep = grad_check(&op, &logits, &[1.0], GRAD_TOL);
        (rep.max_rel_error, rep.passed)
    }));

    let all_ok = results.iter().all(|(_, _, p)| *p == GRAD_TRIALS);
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let failing: Vec<&str> = results
        .iter()
        .filter(|r| r.2 < GRAD_TRIALS)
        .map(|r| r.0.as_str())
        .collect();
    v.report(
        "gradient-check",
        all_ok,
        format!(
            "{} kernels x {GRAD_TRIALS} random inputs, worst relative error {worst:.2e} (tolerance {GRAD_TOL:e}){}",
            results.len(),
            if failing.is_empty() {
                String::new()
            } else {
                format!(", failing: {failing:?}")
            }
        ),
    );
}

fn adam(v: &mut Verdicts) {
    let cfg = AdamConfig::default();
    let (mut theta, mut m, mut s) = ([1.0], [0.0], [0.0]);
    adam_update(&cfg, 1, &mut theta, &mut m, &mut s, &[0.5]);
    // hand evaluation: m̂ = 0.5, v̂ = 0.25
    let expected = 1.0 - 1e-3 * 0.5 / (0.25f64.sqrt() + 1e-8);
    let err = (theta[0] - expected).abs();

    let spec = NetworkSpec {
        input_size: 8,
        depth: 2,
        base_channels: 4,
        inception_levels: [2].into(),
    };
    let mut params = pseudoneg::model::build_network(&spec, 9).unwrap();
    let before = params.clone();
    let mut state = AdamState::new(&params, cfg).unwrap();
    let zeros = params.zeros_like();
    for _ in 0..3 {
        state.step(&mut params, &zeros).unwrap();
    }
    let noop = params == before;
    v.report(
        "adam-exactness",
        err <= 1e-12 && noop,
        format!(
            "theta {:.15} vs {expected:.15} (|diff| {err:.1e}); zero-gradient steps no-op: {noop}",
            theta[0]
        ),
    );
}

/// 8-connected labels computed by breadth-first search.
fn oracle_components(bits: &[bool], w: usize, h: usize) -> Vec<Vec<(usize, usize)>> {
    let mut seen = vec![false; w * h];
    let mut comps = Vec::new();
    for start in 0..w * h {
        if !bits[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            comp.push((x, y));
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if bits[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        comps.push(comp);
    }
    comps
}

/// Maximum number of detection to ground-truth pairs over all one-to-one
/// assignments, by exhaustive search.
fn max_assignment(hits: &[Option<usize>], used: &mut Vec<bool>, i: usize) -> usize {
    if i == hits.len() {
        return 0;
    }
    let skip = max_assignment(hits, used, i + 1);
    match hits[i] {
        Some(g) if !used[g] => {
            used[g] = true;
            let take = 1 + max_assignment(hits, used, i + 1);
            used[g] = false;
            take.max(skip)
        }
        _ => skip,
    }
}

fn blob_map(r: &mut ChaCha8Rng, w: usize, h: usize, max_blobs: usize) -> Vec<bool> {
    let mut bits = vec![false; w * h];
    for _ in 0..r.random_range(0..=max_blobs) {
        let (cx, cy) = (r.random_range(0..w), r.random_range(0..h));
        let (bw, bh) = (r.random_range(1..=3), r.random_range(1..=3));
        for y in cy..(cy + bh).min(h) {
            for x in cx..(cx + bw).min(w) {
                bits[y * w + x] = true;
            }
        }
    }
    bits
}

fn froc_oracle(v: &mut Verdicts) {
    let (w, h) = (8, 8);
    let mut r = rng("froc-oracle");
    let mut mismatches = Vec::new();
    let mut checked = 0;
    let thresholds = [0.8, 0.5, 0.2];
    while checked < 50 {
        let gt_bits = blob_map(&mut r, w, h, 3);
        let pred_bits = blob_map(&mut r, w, h, 3);
        if oracle_components(&gt_bits, w, h).len() > 3 || oracle_components(&pred_bits, w, h).len() > 3 {
            continue;
        }
        checked += 1;
        let values: Vec<f64> = pred_bits
            .iter()
            .map(|&b| {
                if b {
                    r.random_range(0.3..1.0)
                } else {
                    r.random_range(0.0..0.15)
                }
            })
            .collect();
        let prob = ProbMap::new(w, h, values.clone()).unwrap();
        let gt = NoduleMask::new(w, h, gt_bits.clone()).unwrap();
        let data = FrocDataset::new(BTreeMap::from([("a".into(), prob)]), BTreeMap::from([("a".into(), gt)])).unwrap();

        let gt_comps = oracle_components(&gt_bits, w, h);
        let mut gt_label = vec![None; w * h];
        for (g, comp) in gt_comps.iter().enumerate() {
            for &(x, y) in comp {
                gt_label[y * w + x] = Some(g);
            }
        }
        for &t in &thresholds {
            let on: Vec<bool> = values.iter().map(|&p| p > t).collect();
            let dets = oracle_components(&on, w, h);
            let hits: Vec<Option<usize>> = dets
                .iter()
                .map(|c| {
                    let n = c.len() as f64;
                    let cx = (c.iter().map(|p| p.0 as f64).sum::<f64>() / n + 0.5).floor() as usize;
                    let cy = (c.iter().map(|p| p.1 as f64).sum::<f64>() / n + 0.5).floor() as usize;
                    gt_label[cy * w + cx]
                })
                .collect();
            let tp = max_assignment(&hits, &mut vec![false; gt_comps.len()], 0);
            let expected = (tp, dets.len() - tp, gt_comps.len() - tp);
            let rep = froc_point(&data, t).unwrap();
            if (rep.tp, rep.fp, rep.fn_) != expected {
                mismatches.push(format!(
                    "instance {checked} t={t}: got {:?}, oracle {expected:?}",
                    (rep.tp, rep.fp, rep.fn_)
                ));
            }
        }
    }
    v.report(
        "froc-oracle",
        mismatches.is_empty(),
        format!(
            "{checked} random 8x8 instances x {} thresholds; mismatches: {}{}",
            thresholds.len(),
            mismatches.len(),
            mismatches.first().map_or(String::new(), |m| format!(" (first: {m})"))
        ),
    );
}

fn equalization(v: &mut Verdicts) {
    let mut r = rng("equalization");
    let mut exact = 0;
    let mut worst_idem = 0;
    for _ in 0..100 {
        let (w, h) = (r.random_range(1..24), r.random_range(1..24));
        let lo: u8 = r.random_range(0..=255);
        let hi: u8 = r.random_range(lo..=255);
        let px: Vec<u8> = (0..w * h).map(|_| r.random_range(lo..=hi)).collect();
        let img = Image::new(w, h, px.clone()).unwrap();
        let got = equalize_histogram(&img);

        let n = px.len();
        let cdf = |v: u8| px.iter().filter(|&&p| p <= v).count();
        let cdf_min = cdf(*px.iter().min().unwrap());
        let reference: Vec<u8> = if cdf_min == n {
            px.clone()
        } else {
            px.iter()
                .map(|&p| ((cdf(p) - cdf_min) as f64 / (n - cdf_min) as f64 * 255.0).round() as u8)
                .collect()
        };
        exact += usize::from(got.pixels() == reference.as_slice());
        let twice = equalize_histogram(&got);
        let drift = got
            .pixels()
            .iter()
            .zip(twice.pixels())
            .map(|(a, b)| a.abs_diff(*b))
            .max()
            .unwrap_or(0);
        worst_idem = worst_idem.max(drift);
    }
    v.report(
        "equalization-oracle",
        exact == 100 && worst_idem <= 1,
        format!("{exact}/100 images equal the CDF reference; worst idempotence drift {worst_idem} level(s)"),
    );
}

fn macs(v: &mut Verdicts) {
    let spec = NetworkSpec::default();
    let inc = count_macs(&spec, true).unwrap().encoder;
    let plain = count_macs(&spec, false).unwrap().encoder;
    // second path: sum the per-layer plan
    let planned = |use_inception: bool| -> u64 {
        (1..=spec.depth)
            .flat_map(|l| spec.encoder_layers(l, use_inception && spec.uses_inception(l)))
            .map(|s| s.macs())
            .sum()
    };
    let agree = planned(true) == inc && planned(false) == plain;
    let ratio = inc as f64 / plain as f64;
    v.report(
        "inception-macs",
        ratio <= 0.8 && agree,
        format!(
            "inception encoder {inc} MACs vs plain {plain} (ratio {ratio:.4}, limit 0.8); layer plan agrees: {agree}"
        ),
    );
}

fn zero_detections(prob: &ProbMap, threshold: f64) -> bool {
    let bits: Vec<bool> = prob.values().iter().map(|&p| p > threshold).collect();
    oracle_components(&bits, prob.width(), prob.height()).is_empty()
}

/// Checks a mining outcome against an independent thresholding of the
/// model output. Returns a description of the first problem.
fn verify_mining(
    params: &pseudoneg::model::ParameterSet,
    pool: &[(String, Image)],
    outcome: &pseudoneg::mining::MiningOutcome,
) -> Option<String> {
    let mined: BTreeSet<&String> = outcome.pseudo_negative_ids.iter().collect();
    let dropped: BTreeSet<&String> = outcome.discarded_ids.iter().collect();
    let all: BTreeSet<&String> = pool.iter().map(|(id, _)| id).collect();
    if !mined.is_disjoint(&dropped) {
        return Some("mined and discarded overlap".into());
    }
    if mined.union(&dropped).copied().collect::<BTreeSet<_>>() != all {
        return Some("mined + discarded differs from the pool".into());
    }
    for (id, img) in pool {
        let input = pseudoneg::preprocess::prepare_input(img);
        let prob = ProbMap::from_tensor(&forward(params, &input).unwrap(), 0).unwrap();
        let empty = zero_detections(&prob, outcome.mining_threshold);
        if empty != mined.contains(id) {
            return Some(format!("{id}: oracle says empty={empty}"));
        }
    }
    None
}

fn mining_on_untrained(v: &mut Verdicts) {
    let spec = NetworkSpec {
        input_size: 32,
        ..NetworkSpec::default()
    };
    let data = generate_dataset(&SynthConfig {
        image_size: 32,
        n_labeled: 0,
        n_unlabeled: 40,
        n_true_negative: 0,
        radius_max: 4.0,
        seed: 17,
        ..SynthConfig::default()
    })
    .unwrap();
    let pool: Vec<(String, Image)> = data.unlabeled.iter().map(|s| (s.id.clone(), s.image.clone())).collect();
    let refs: Vec<(&str, &Image)> = pool.iter().map(|(id, img)| (id.as_str(), img)).collect();
    let mut problems = Vec::new();
    let mut counts = Vec::new();
    for seed in 0..3 {
        let params = pseudoneg::model::build_network(&spec, seed).unwrap();
        for t in [0.3, 0.5, 0.52, 0.7] {
            let out = mine_pseudo_negatives(&params, &refs, t).unwrap();
            counts.push(out.pseudo_negative_ids.len());
            problems.extend(verify_mining(&params, &pool, &out));
        }
    }
    let spread = counts.iter().min().unwrap() < counts.iter().max().unwrap();
    v.report(
        "mining-partition",
        problems.is_empty(),
        format!(
            "3 untrained models x 4 thresholds on 40 images; mined counts {counts:?} (non-trivial mix: {spread}); problems: {}",
            problems.first().map_or("none".to_string(), Clone::clone)
        ),
    );
}

type SeedRun = (u64, Vec<FoldOutcome>, SynthDataset);

fn benchmark(v: &mut Verdicts) -> Vec<SeedRun> {
    let mut runs: Vec<SeedRun> = Vec::new();
    let mut fp_ok = 0;
    let mut unref_ok = 0;
    let mut parity_ok = 0;
    let mut lines = Vec::new();
    let total = Instant::now();
    for seed in SEEDS {
        let t0 = Instant::now();
        let data = generate_dataset(&SynthConfig {
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = TrainingConfig {
            seed,
            ..TrainingConfig::default()
        };
        let (cv, cmp, outcomes) = run_benchmark(&data, &cfg).unwrap();
        let a = cv.averages;
        let fp =
            a.phase2_fp_per_image <= 0.7 * a.phase1_fp_per_image && a.phase2_sensitivity >= a.phase1_sensitivity - 0.03;
        let row = |s| cmp.row(s).expect("all sources present");
        let (appr, pseudo, unl) = (
            row(NegativeSource::Approved),
            row(NegativeSource::PseudoNegative),
            row(NegativeSource::Unlabeled),
        );
        let unref = unl.sensitivity < pseudo.sensitivity;
        let parity = appr.fp_per_image <= 1.25 * pseudo.fp_per_image;
        fp_ok += usize::from(fp);
        unref_ok += usize::from(unref);
        parity_ok += usize::from(parity);
        let mined: Vec<usize> = outcomes.iter().map(|o| o.mining.pseudo_negative_ids.len()).collect();
        lines.push(format!(
            "  seed {seed}: phase1 sens {:.3} fp {:.3} | phase2 sens {:.3} fp {:.3} (ratio {:.2}) | approved {:.3}/{:.3} pseudo {:.3}/{:.3} unlabeled {:.3}/{:.3} | mined {mined:?} | {:.0}s",
            a.phase1_sensitivity,
            a.phase1_fp_per_image,
            a.phase2_sensitivity,
            a.phase2_fp_per_image,
            a.phase2_fp_per_image / a.phase1_fp_per_image,
            appr.sensitivity,
            appr.fp_per_image,
            pseudo.sensitivity,
            pseudo.fp_per_image,
            unl.sensitivity,
            unl.fp_per_image,
            t0.elapsed().as_secs_f64()
        ));
        runs.push((seed, outcomes, data));
    }
    println!(
        "benchmark, {} seeds, {:.0}s total (sensitivity/fp per image):",
        SEEDS.len(),
        total.elapsed().as_secs_f64()
    );
    for l in &lines {
        println!("{l}");
    }
    v.report(
        "fp-reduction",
        fp_ok >= 4,
        format!("{fp_ok}/5 seeds with phase-2 fp <= 0.7 x phase-1 fp and sensitivity within 0.03 (need 4)"),
    );
    v.report(
        "unrefined-degradation",
        unref_ok >= 4,
        format!("{unref_ok}/5 seeds with unlabeled sensitivity < pseudo-negative sensitivity (need 4)"),
    );
    v.report(
        "true-negative-parity",
        parity_ok >= 3,
        format!("{parity_ok}/5 seeds with approved fp <= 1.25 x pseudo-negative fp (need 3)"),
    );
    runs
}

fn mining_on_trained(v: &mut Verdicts, runs: &[SeedRun]) {
    let mut problems = Vec::new();
    let mut checked = 0;
    for (seed, outcomes, data) in runs {
        let pool: Vec<(String, Image)> = data.unlabeled.iter().map(|s| (s.id.clone(), s.image.clone())).collect();
        for o in outcomes {
            checked += 1;
            if let Some(p) = verify_mining(&o.phase1.params, &pool, &o.mining) {
                problems.push(format!("seed {seed} fold {}: {p}", o.fold + 1));
            }
        }
    }
    v.report(
        "mining-trained",
        problems.is_empty(),
        format!(
            "{checked} trained phase-1 models re-verified image by image; problems: {}",
            problems.first().map_or("none".into(), Clone::clone)
        ),
    );
}

fn determinism(v: &mut Verdicts) {
    let seed = SEEDS[0];
    let synth = generate_dataset(&SynthConfig {
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let cfg = TrainingConfig {
        seed,
        ..TrainingConfig::default()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut trees = Vec::new();
    for d in &dirs {
        let (cv, outcomes) = run_cross_validation(&synth, &cfg).unwrap();
        write_run(d.path(), &outcomes, Some(&cv), None).unwrap();
        trees.push(hash_tree(d.path()).unwrap());
    }
    let same = trees[0] == trees[1];
    let ckpts = trees[0].iter().filter(|(p, _)| p.ends_with(".ckpt")).count();
    let csvs = trees[0].iter().filter(|(p, _)| p.ends_with(".csv")).count();
    v.report(
        "determinism",
        same && ckpts > 0,
        format!("two crossval runs (seed {seed}, default config): {} files incl. {ckpts} checkpoints and {csvs} CSVs, byte-identical: {same}", trees[0].len()),
    );
}
