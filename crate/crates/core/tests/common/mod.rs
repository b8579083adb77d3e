#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

/// A complete experiment small enough to run every command in seconds.
pub const TINY_CONFIG: &str = r#"
seeds = [1, 2]
output_dir = "run"

[data]
source_manifest = "data/source/manifest.jsonl"
target_manifest = "data/target/manifest.jsonl"

[patch]
crop_size = 32
out_size = 16

[augment]
translate_sigma = 0.6

[net]
input_size = 16
stem_channels = 4
stem_stride = 1
stage_channels = [4, 8]
blocks_per_stage = [1, 1]

[train]
epochs = 1
epoch_size = 64
adam = { lr = 1e-3 }

[finetune]
epochs = 1
epoch_size = 32

[hm]
source_samples = 6
target_samples = 3

[synth]
image_size = 64
blob_sigma = [2.0, 3.0]
source_counts = { train = 12, val = 6, test = 8 }
target_counts = { train = 6, val = 6, test = 8 }
"#;

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_harmonize"))
}

/// Run the CLI in `dir` with the output-root override cleared.
pub fn run(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env_remove("HARMONIZE_OUTPUT")
        .output()
        .expect("spawn harmonize")
}

pub fn run_ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "harmonize {args:?} failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Relative path → file bytes for every file under `root`.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
