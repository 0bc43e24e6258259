mod common;

use std::fs;
use std::path::Path;

use brainage::manifest::read_manifest;
use brainage::metrics::EvalReport;
use common::{run_cli, workspace_root};

fn smoke_config() -> String {
    workspace_root().join("configs/smoke.toml").to_str().unwrap().to_string()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run_cli(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn full_run(dir: &Path, config: &str) {
    for step in ["synth", "pretrain", "train-stage1", "train-stage2", "predict"] {
        ok(dir, &["-q", "-c", config, step]);
    }
}

#[test]
fn synth_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    ok(dir.path(), &["-q", "-c", &cfg, "synth"]);
    let manifest = dir.path().join("runs/smoke/cohort/train/manifest.csv");
    let first = fs::read(&manifest).unwrap();
    let volume = fs::read(manifest.parent().unwrap().join(&read_manifest(&manifest).unwrap()[0].path)).unwrap();
    ok(dir.path(), &["-q", "-c", &cfg, "synth"]);
    assert_eq!(fs::read(&manifest).unwrap(), first);
    assert_eq!(
        fs::read(manifest.parent().unwrap().join(&read_manifest(&manifest).unwrap()[0].path)).unwrap(),
        volume
    );
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    full_run(dir.path(), &smoke_config());
    let work = dir.path().join("runs/smoke");
    let predictions = fs::read(work.join("predictions.csv")).unwrap();
    let stage2 = fs::read(work.join("checkpoints/stage2.ckpt")).unwrap();

    let resolved = work.join("config.resolved.toml");
    assert!(fs::read_to_string(&resolved).unwrap().starts_with("# fingerprint = "));
    let again = tempfile::tempdir().unwrap();
    let resolved_copy = again.path().join("run.toml");
    fs::copy(&resolved, &resolved_copy).unwrap();
    full_run(again.path(), resolved_copy.to_str().unwrap());
    let work2 = again.path().join("runs/smoke");
    assert_eq!(fs::read(work2.join("predictions.csv")).unwrap(), predictions);
    assert_eq!(fs::read(work2.join("checkpoints/stage2.ckpt")).unwrap(), stage2);
}

#[test]
fn evaluate_prints_a_table_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    full_run(dir.path(), &cfg);
    for (mode, file) in [("per_subject", "report.per_subject.json"), ("per_modality", "report.per_modality.json")] {
        let out = run_cli(dir.path(), &["-q", "-c", &cfg, "evaluate", "--mode", mode]);
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains("MAE / STD") && text.contains("confusion"), "{text}");
        let json = fs::read_to_string(dir.path().join("runs/smoke").join(file)).unwrap();
        let report = EvalReport::from_json(&json).unwrap();
        assert_eq!(report.confusion.total() as usize, report.overall.n);
    }
}

#[test]
fn preprocess_mirrors_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    ok(dir.path(), &["-q", "-c", &cfg, "synth"]);
    ok(
        dir.path(),
        &["-q", "-c", &cfg, "preprocess", "--input", "runs/smoke/cohort/test/manifest.csv", "--output", "prep"],
    );
    let rows = read_manifest(dir.path().join("prep/manifest.csv")).unwrap();
    assert!(!rows.is_empty());
    for r in rows {
        let v = brainage::volume::read_vol(dir.path().join("prep").join(&r.path)).unwrap();
        assert_eq!(v.modality(), r.modality);
    }
}

#[test]
fn exit_codes_follow_error_families() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let code = |args: &[&str]| run_cli(dir.path(), args).status.code().unwrap();

    assert_eq!(code(&["-c", "missing.toml", "synth"]), 1);
    fs::write(dir.path().join("typo.toml"), "[cohort]\nn_per_stag = 3\n").unwrap();
    assert_eq!(code(&["-c", "typo.toml", "synth"]), 1);

    assert_eq!(code(&["-q", "-c", &cfg, "predict"]), 2);
    let out = run_cli(dir.path(), &["-q", "-c", &cfg, "train-stage2"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("brainage train-stage1"));

    ok(dir.path(), &["-q", "-c", &cfg, "synth"]);
    ok(dir.path(), &["-q", "-c", &cfg, "pretrain"]);
    let pretrain = "runs/smoke/checkpoints/pretrain.ckpt";
    assert_eq!(code(&["-q", "-c", &cfg, "train-stage2", "--stage1", pretrain]), 4);

    fs::write(dir.path().join("bad.ckpt"), b"BAGE\x07\x00").unwrap();
    assert_eq!(code(&["-q", "-c", &cfg, "train-stage2", "--stage1", "bad.ckpt"]), 3);

    let other = fs::read_to_string(&cfg).unwrap().replace("pretrain_steps = 5", "pretrain_steps = 6");
    fs::write(dir.path().join("other.toml"), other).unwrap();
    assert_eq!(code(&["-q", "-c", "other.toml", "train-stage1"]), 4);
    assert_eq!(code(&["-q", "-c", "other.toml", "--force", "train-stage1"]), 0);
}
