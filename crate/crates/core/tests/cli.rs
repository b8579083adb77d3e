mod common;

use std::path::Path;
use std::process::Command;

use common::{run, run_ok, TINY_CONFIG};
use harmonize::histmatch::Cdf;
use harmonize::pgm::read_pgm;
use harmonize::report::read_json;

fn setup(dir: &Path) {
    std::fs::write(dir.join("tiny.toml"), TINY_CONFIG).unwrap();
    run_ok(dir, &["synth", "--config", "tiny.toml", "--out", "data"]);
}

fn code(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = run(dir, args);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn json(path: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn missing_config_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (c, err) = code(tmp.path(), &["train", "--config", "nope.toml"]);
    assert_eq!(c, 4, "{err}");
    assert!(err.contains("nope.toml"), "{err}");
}

#[test]
fn invalid_field_is_a_config_error_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    let bad = TINY_CONFIG.replace("out_size = 16", "out_size = 12");
    std::fs::write(tmp.path().join("bad.toml"), bad).unwrap();
    let (c, err) = code(tmp.path(), &["train", "--config", "bad.toml"]);
    assert_eq!(c, 2, "{err}");
    assert!(err.contains("net.input_size") || err.contains("patch.out_size"), "{err}");

    let bad = TINY_CONFIG.replace("seeds = [1, 2]", "seeds = []");
    std::fs::write(tmp.path().join("bad.toml"), bad).unwrap();
    let (c, err) = code(tmp.path(), &["train", "--config", "bad.toml"]);
    assert_eq!(c, 2, "{err}");
    assert!(err.contains("seeds"), "{err}");
}

#[test]
fn unknown_mode_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (c, _) = code(tmp.path(), &["finetune", "--config", "x.toml", "--mode", "everything"]);
    assert_eq!(c, 2);
}

#[test]
fn missing_image_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    std::fs::remove_file(tmp.path().join("data/source/images/train_00000.pgm")).unwrap();
    let (c, err) = code(tmp.path(), &["train", "--config", "tiny.toml"]);
    assert_eq!(c, 4, "{err}");
    assert!(err.contains("train_00000.pgm"), "{err}");
}

#[test]
fn empty_manifest_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("empty.jsonl"), "").unwrap();
    let (c, err) = code(tmp.path(), &["cdf", "--manifest", "empty.jsonl", "--out", "c.json", "--samples", "1"]);
    assert_eq!(c, 3, "{err}");
}

#[test]
fn malformed_manifest_line_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("m.jsonl"), "{\"image_path\": 3}\n").unwrap();
    let (c, err) = code(tmp.path(), &["cdf", "--manifest", "m.jsonl", "--out", "c.json", "--samples", "1"]);
    assert_ne!(c, 0);
    assert!(err.contains("m.jsonl"), "{err}");
}

#[test]
fn output_root_env_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    let out = Command::new(common::bin())
        .args(["train", "--config", "tiny.toml"])
        .current_dir(tmp.path())
        .env("HARMONIZE_OUTPUT", tmp.path().join("elsewhere"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("elsewhere/checkpoints/source_seed1.json").is_file());
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn eval_of_source_checkpoint_matches_training_report() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    run_ok(tmp.path(), &["train", "--config", "tiny.toml"]);
    run_ok(tmp.path(), &["eval", "--config", "tiny.toml", "--mode", "test_only", "--domain", "source"]);
    let trained = json(tmp.path().join("run/reports/train_from_scratch_source.json"));
    let evaluated = json(tmp.path().join("run/reports/test_only_source_raw.json"));
    assert_eq!(trained["per_seed"], evaluated["per_seed"]);
    assert_eq!(trained["mean"], evaluated["mean"]);
}

#[test]
fn eval_requires_a_finetuned_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    run_ok(tmp.path(), &["train", "--config", "tiny.toml"]);
    let (c, err) = code(tmp.path(), &["eval", "--config", "tiny.toml", "--mode", "spottune"]);
    assert_eq!(c, 4, "{err}");
}

#[test]
fn match_onto_own_cdf_is_near_identity() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    let dir = tmp.path();
    run_ok(dir, &["cdf", "--manifest", "data/target/manifest.jsonl", "--out", "t.json", "--samples", "3"]);
    run_ok(dir, &[
        "match", "--input", "data/target/images", "--source-cdf", "t.json", "--reference-cdf", "t.json", "--out", "same",
    ]);
    // only levels carrying mass in the CDF are guaranteed to map back onto themselves
    let cdf: Cdf = read_json(dir.join("t.json")).unwrap();
    let occupied = |p: usize| cdf.at(p) > if p == 0 { 0.0 } else { cdf.at(p - 1) };
    let (mut n, mut checked) = (0, 0);
    for e in std::fs::read_dir(dir.join("data/target/images")).unwrap() {
        let p = e.unwrap().path();
        let a = read_pgm(&p).unwrap();
        let b = read_pgm(dir.join("same").join(p.file_name().unwrap())).unwrap();
        for (x, y) in a.pixels().iter().zip(b.pixels()) {
            if occupied(*x as usize) {
                assert!((i64::from(*x) - i64::from(*y)).abs() <= 1);
                checked += 1;
            }
        }
        n += 1;
    }
    assert_eq!(n, 20);
    assert!(checked > 10_000);
}

#[test]
fn full_pipeline_writes_expected_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    let dir = tmp.path();
    run_ok(dir, &["train", "--config", "tiny.toml"]);
    run_ok(dir, &["finetune", "--config", "tiny.toml", "--mode", "spottune", "--hm", "on"]);
    run_ok(dir, &["eval", "--config", "tiny.toml", "--mode", "spottune", "--hm", "on"]);
    run_ok(dir, &["report", "--config", "tiny.toml"]);
    let run = dir.join("run");
    for rel in [
        "checkpoints/source_seed1.json",
        "checkpoints/source_seed2.json",
        "checkpoints/spottune_hm_seed2.json",
        "hm/lut_seed1.json",
        "policy/spottune_hm_seed1.csv",
        "history/source_seed1.json",
        "reports/spottune_target_hm.json",
        "reports/spottune_target_hm_roc.csv",
        "meta/train.json",
        "summary.txt",
        "summary.json",
    ] {
        assert!(run.join(rel).is_file(), "missing {rel}");
    }
    let policy = std::fs::read_to_string(run.join("policy/spottune_hm_seed1.csv")).unwrap();
    assert!(policy.starts_with("block_index,finetune_probability\n"));
    assert_eq!(policy.lines().count(), 3);
    let roc = std::fs::read_to_string(run.join("reports/spottune_target_hm_roc.csv")).unwrap();
    assert!(roc.starts_with("fpr,tpr,threshold\n"));
    let meta = json(run.join("meta/train.json"));
    assert_eq!(meta["run"]["seeds"], serde_json::json!([1, 2]));
    assert_eq!(meta["run"]["config_hash"].as_str().unwrap().len(), 64);
    let summary = std::fs::read_to_string(run.join("summary.txt")).unwrap();
    assert!(summary.contains("spottune"), "{summary}");
}

#[test]
fn shipped_desk_config_parses() {
    let cfg = harmonize::config::ExperimentConfig::from_toml(
        include_str!("../configs/desk.toml"),
        Path::new("configs"),
    )
    .unwrap();
    let mut desk = harmonize::config::ExperimentConfig::desk();
    desk.data = cfg.data.clone();
    desk.output_dir = cfg.output_dir.clone();
    assert_eq!(cfg, desk);
}
