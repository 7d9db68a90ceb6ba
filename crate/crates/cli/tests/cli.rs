use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const TINY: &str = "seed = 3
image_size = 24
n_labeled = 8
n_unlabeled = 6
n_true_negative = 4
radius_min = 2
radius_max = 3
depth = 2
base_channels = 4
inception_levels = 2
epochs_phase1 = 1
epochs_phase2 = 1
batch_size = 4
folds = 2
";

fn pseudoneg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pseudoneg"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = pseudoneg(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn fail(dir: &Path, args: &[&str]) -> String {
    let out = pseudoneg(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.txt"), TINY).unwrap();
    dir
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("run.json")).unwrap()).unwrap()
}

#[test]
fn generate_lists_every_file_with_its_hash() {
    let ws = workspace();
    let d = ws.path();
    ok(d, &["generate", "--config", "tiny.txt", "--out", "data"]);
    let m = manifest(&d.join("data"));
    assert_eq!(m["command"], "generate");
    assert_eq!(m["seed"], 3);
    assert_eq!(m["summary"]["labeled"], 8.0);
    let files = m["files"].as_object().unwrap();
    assert!(files.contains_key("manifest.tsv"));
    assert!(files.contains_key("config.txt"));
    // image and mask per labeled sample
    assert_eq!(files.keys().filter(|k| k.starts_with("labeled/")).count(), 16);
    assert!(!files.contains_key("run.json"));
    assert!(m["inputs"].as_object().unwrap().contains_key("tiny.txt"));
}

#[test]
fn seed_flag_overrides_config() {
    let ws = workspace();
    let d = ws.path();
    ok(d, &["generate", "--config", "tiny.txt", "--seed", "11", "--out", "a"]);
    assert_eq!(manifest(&d.join("a"))["seed"], 11);
    assert!(fs::read_to_string(d.join("a/config.txt"))
        .unwrap()
        .contains("seed = 11"));
}

#[test]
fn two_phase_workflow_by_hand() {
    let ws = workspace();
    let d = ws.path();
    ok(d, &["generate", "--config", "tiny.txt", "--out", "data"]);
    ok(d, &["train", "--config", "tiny.txt", "--data", "data", "--out", "p1"]);
    assert!(d.join("p1/phase1.ckpt").is_file());
    assert_eq!(
        fs::read_to_string(d.join("p1/phase1_log.csv")).unwrap().lines().count(),
        2
    );

    let err = fail(
        d,
        &[
            "mine",
            "--config",
            "tiny.txt",
            "--data",
            "data",
            "--checkpoint",
            "p1/phase1.ckpt",
            "--out",
            "m",
        ],
    );
    assert!(err.contains("--threshold"), "{err}");
    ok(
        d,
        &[
            "mine",
            "--config",
            "tiny.txt",
            "--data",
            "data",
            "--checkpoint",
            "p1/phase1.ckpt",
            "--threshold",
            "0.999",
            "--out",
            "m2",
        ],
    );
    let mined = fs::read_to_string(d.join("m2/mining.tsv")).unwrap();
    assert!(mined.starts_with("threshold=0.999\n"));
    assert_eq!(mined.lines().filter(|l| l.starts_with("unl-")).count(), 6);

    ok(
        d,
        &[
            "train",
            "--config",
            "tiny.txt",
            "--data",
            "data",
            "--init",
            "p1/phase1.ckpt",
            "--mined",
            "m2/mining.tsv",
            "--out",
            "p2",
        ],
    );
    let inputs = manifest(&d.join("p2"))["inputs"].clone();
    assert!(inputs.as_object().unwrap().contains_key("m2/mining.tsv"));

    ok(
        d,
        &[
            "evaluate",
            "--config",
            "tiny.txt",
            "--data",
            "data",
            "--checkpoint",
            "p2/phase2.ckpt",
            "--out",
            "ev",
        ],
    );
    let froc = fs::read_to_string(d.join("ev/froc.csv")).unwrap();
    assert!(froc.starts_with("fold,phase,threshold,sensitivity,fp_per_image\n"));
    assert_eq!(froc.lines().count(), 100);
    assert!(manifest(&d.join("ev"))["summary"]["threshold"].is_number());
}

#[test]
fn phase2_rejects_a_manifest_from_another_checkpoint() {
    let ws = workspace();
    let d = ws.path();
    ok(d, &["train", "--config", "tiny.txt", "--out", "a"]);
    ok(d, &["train", "--config", "tiny.txt", "--seed", "4", "--out", "b"]);
    ok(
        d,
        &[
            "mine",
            "--config",
            "tiny.txt",
            "--checkpoint",
            "a/phase1.ckpt",
            "--threshold",
            "0.5",
            "--out",
            "m",
        ],
    );
    let err = fail(
        d,
        &[
            "train",
            "--config",
            "tiny.txt",
            "--init",
            "b/phase1.ckpt",
            "--mined",
            "m/mining.tsv",
            "--out",
            "p2",
        ],
    );
    assert!(err.contains("different checkpoint"), "{err}");
}

#[test]
fn crossval_is_byte_reproducible() {
    let ws = workspace();
    let d = ws.path();
    ok(d, &["crossval", "--config", "tiny.txt", "--out", "r1"]);
    ok(d, &["crossval", "--config", "tiny.txt", "--out", "r2"]);
    let (a, b) = (manifest(&d.join("r1")), manifest(&d.join("r2")));
    assert_eq!(a["files"], b["files"]);
    let files = a["files"].as_object().unwrap();
    for name in [
        "table1.csv",
        "froc.csv",
        "fold1/phase1.ckpt",
        "fold2/mining.tsv",
        "fold2/phase2_pseudonegative.ckpt",
    ] {
        assert!(files.contains_key(name), "{name} missing");
    }
    assert!(!files.contains_key("table2.csv"));
    let table = fs::read_to_string(d.join("r1/table1.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.lines().last().unwrap().starts_with("Avg,"));
}

#[test]
fn compare_writes_both_tables() {
    let ws = workspace();
    let d = ws.path();
    let out = ok(d, &["compare", "--config", "tiny.txt", "--threads", "2", "--out", "c"]);
    let t2 = fs::read_to_string(d.join("c/table2.csv")).unwrap();
    let sources: Vec<&str> = t2.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(sources, ["approved", "pseudonegative", "unlabeled"]);
    assert!(d.join("c/table1.csv").is_file());
    assert!(d.join("c/fold1/phase2_unlabeled.ckpt").is_file());
    assert!(String::from_utf8_lossy(&out.stdout).contains("fp_per_scan"));
}

#[test]
fn output_directories_are_guarded() {
    let ws = workspace();
    let d = ws.path();
    ok(d, &["generate", "--config", "tiny.txt", "--out", "data"]);
    let err = fail(d, &["generate", "--config", "tiny.txt", "--out", "data"]);
    assert!(err.contains("--force"), "{err}");
    ok(
        d,
        &[
            "generate", "--config", "tiny.txt", "--seed", "5", "--out", "data", "--force",
        ],
    );
    assert_eq!(manifest(&d.join("data"))["seed"], 5);

    fs::create_dir(d.join("mine")).unwrap();
    fs::write(d.join("mine/notes.txt"), "keep me").unwrap();
    let err = fail(d, &["generate", "--config", "tiny.txt", "--out", "mine", "--force"]);
    assert!(err.contains("refusing"), "{err}");
    assert_eq!(fs::read_to_string(d.join("mine/notes.txt")).unwrap(), "keep me");

    let err = fail(
        d,
        &[
            "crossval", "--config", "tiny.txt", "--data", "data", "--out", "data", "--force",
        ],
    );
    assert!(err.contains("inside the output"), "{err}");
    assert!(d.join("data/manifest.tsv").is_file());
}

#[test]
fn bad_input_is_reported() {
    let ws = workspace();
    let d = ws.path();
    fs::write(d.join("bad.txt"), "seed = 1\nbatch_size = lots\n").unwrap();
    let err = fail(d, &["generate", "--config", "bad.txt", "--out", "x"]);
    assert!(err.contains("batch_size"), "{err}");
    let err = fail(d, &["generate", "--config", "tiny.txt", "--threads", "0", "--out", "x"]);
    assert!(err.contains("--threads"), "{err}");
    let err = fail(d, &["generate", "--config", "tiny.txt"]);
    assert!(err.contains("--out"), "{err}");
    let err = fail(
        d,
        &[
            "evaluate",
            "--config",
            "tiny.txt",
            "--checkpoint",
            "nope.ckpt",
            "--out",
            "x",
        ],
    );
    assert!(err.contains("nope.ckpt"), "{err}");
    assert!(!d.join("x").exists(), "failed runs leave no output behind");
}
