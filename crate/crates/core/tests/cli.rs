//! The command-line tool: subcommand flow and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn sigverify(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sigverify"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_CONFIG: &str = r#"
[preprocess]
canvas_height = 80
canvas_width = 120
out_height = 24
out_width = 36

[signet]
feature_dim = 6
conv_blocks = [{ out_channels = 4, kernel_size = 3, stride = 2 }]

[signetf]
feature_dim = 6
conv_blocks = [{ out_channels = 4, kernel_size = 3, stride = 2 }]

[train]
epochs = 2
batch_size = 8

[ensemble.gbt]
n_rounds = 10
"#;

#[test]
fn usage_errors_exit_1() {
    assert_eq!(sigverify(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(sigverify(&["train-extractor", "--objective", "resnet", "--manifest", "m.csv"]).status.code(), Some(1));
    assert_eq!(sigverify(&["run"]).status.code(), Some(1));
    assert_eq!(sigverify(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = sigverify(&["scan", "/no/such/dataset", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));

    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[dataset]\nroot = \"absent\"\nlayout = \"cedar\"\n").unwrap();
    let out = sigverify(&["run", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage scan"));

    let junk = dir.path().join("junk.sens");
    std::fs::write(&junk, b"not a model").unwrap();
    let out = sigverify(&["evaluate", "--model", s(&junk), "--signet", s(&junk), "--signetf", s(&junk)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn step_by_step_flow_matches_file_contracts() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p);
    let cfg = d("cfg.toml");
    std::fs::write(&cfg, SMALL_CONFIG).unwrap();
    let ok = |args: &[&str]| {
        let out = sigverify(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    ok(&["synth", "--writers", "4", "--genuine", "3", "--forged", "3", "--out", s(&d("data"))]);
    ok(&["scan", s(&d("data")), "--layout", "cedar", "--out", s(&d("scan"))]);
    let manifest = d("scan/manifest.csv");
    ok(&["--config", s(&cfg), "--out", s(&d("cache")), "preprocess", "--manifest", s(&manifest)]);
    let cached = d("cache/manifest.csv");
    for objective in ["signet", "signet-f"] {
        ok(&["--config", s(&cfg), "--out", s(&d("nets")), "train-extractor", "--objective", objective, "--manifest", s(&cached), "--preprocessed"]);
    }
    for (model, name) in [("signet.sfnt", "a.sftv"), ("signetf.sfnt", "b.sftv")] {
        ok(&["--config", s(&cfg), "--out", s(&d("feat")), "extract", "--model", s(&d("nets").join(model)), "--manifest", s(&cached), "--preprocessed", "--name", name]);
    }
    ok(&["--config", s(&cfg), "--out", s(&d("ens")), "train", "--signet", s(&d("feat/a.sftv")), "--signetf", s(&d("feat/b.sftv"))]);
    ok(&["--out", s(&d("eval")), "evaluate", "--model", s(&d("ens/ensemble.sens")), "--signet", s(&d("feat/a.sftv")), "--signetf", s(&d("feat/b.sftv"))]);

    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report["n_test"], 24);
    for key in ["accuracy_at_half", "max_accuracy", "best_threshold", "far", "frr"] {
        let v = report[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
    let (x, labels) = sigverify::datasets::read_features(d("feat/a.sftv")).unwrap();
    assert_eq!(x.dim(), (24, 6));
    assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 12);
}

#[test]
fn run_with_seed_override_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p);
    let out = sigverify(&["synth", "--writers", "5", "--genuine", "4", "--forged", "4", "--out", s(&d("data"))]);
    assert!(out.status.success());
    let cfg = d("cfg.toml");
    std::fs::write(&cfg, format!("[dataset]\nroot = \"data\"\nlayout = \"cedar\"\n{SMALL_CONFIG}")).unwrap();
    for run in ["a", "b"] {
        let out = sigverify(&["--config", s(&cfg), "--seed", "3", "--out", s(&d(run)), "run"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read(d("a/report.json")).unwrap(), std::fs::read(d("b/report.json")).unwrap());
    let train = sigverify::datasets::read_manifest(d("a/train.csv")).unwrap();
    assert_eq!(train.len(), 40 - 14);
}
