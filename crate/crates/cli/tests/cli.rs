use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eeg_audit::adapter::{EditRequest, Refusal, Split, EDIT_FORMAT};
use eeg_audit::io::{read_json, write_json, CellPaths};
use eeg_audit::report::{read_report, AuditReport};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_eeg-audit");

fn run(args: &[&str]) -> Output {
    let out = Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn eeg-audit");
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a small planted cell `planted/<model>` under `root`.
fn gen(root: &Path, model: &str) {
    let out = run(&[
        "harness", "gen", "--data-root", s(root), "--model", model, "--n-train", "300", "--n-val", "100",
        "--n-test", "100", "--n-used", "4", "--n-enc", "4",
    ]);
    assert_eq!(code(&out), 0);
}

fn audit(root: &Path, out_dir: &Path, extra: &[&str]) -> (i32, PathBuf) {
    let mut args = vec!["audit", "--data-root", s(root), "--out-dir", s(out_dir)];
    args.extend_from_slice(extra);
    let out = run(&args);
    (code(&out), out_dir.join("report.json"))
}

fn report(path: &Path) -> AuditReport {
    read_report(path).unwrap()
}

#[test]
fn generated_cell_audits_cleanly() {
    let dir = TempDir::new().unwrap();
    let root = dir.path().join("data");
    gen(&root, "linear");
    let (status, path) = audit(&root, &dir.path().join("out"), &[]);
    assert_eq!(status, 0);
    let r = report(&path);
    assert_eq!(r.cells.len(), 1);
    assert_eq!(r.cells[0].cell(), "planted/linear");
    assert!(r.leakage.pass);
    assert!(r.hard_errors().next().is_none());
    assert!(r.cells[0].closure.is_some());
    for csv in ["probes.csv", "stats.csv", "closure.csv", "failures.csv"] {
        assert!(dir.path().join("out").join(csv).exists(), "{csv}");
    }
}

#[test]
fn external_responder_gives_the_same_report() {
    let dir = TempDir::new().unwrap();
    let root = dir.path().join("data");
    gen(&root, "linear");
    let (a, in_process) = audit(&root, &dir.path().join("a"), &[]);
    let (b, external) = audit(
        &root,
        &dir.path().join("b"),
        &["--responder", BIN, "--responder-arg", "harness", "--responder-arg", "respond"],
    );
    assert_eq!((a, b), (0, 0));
    assert_eq!(std::fs::read(in_process).unwrap(), std::fs::read(external).unwrap());
}

#[test]
fn features_command_rewrites_identical_files() {
    let dir = TempDir::new().unwrap();
    let root = dir.path().join("data");
    gen(&root, "linear");
    let paths = CellPaths::new(&root, "planted", "linear");
    let before: Vec<Vec<u8>> = Split::ALL.iter().map(|&sp| std::fs::read(paths.features(sp)).unwrap()).collect();
    let qc = std::fs::read(paths.qc_csv()).unwrap();
    assert_eq!(code(&run(&["features", "--data-root", s(&root)])), 0);
    for (sp, bytes) in Split::ALL.iter().zip(&before) {
        assert_eq!(&std::fs::read(paths.features(*sp)).unwrap(), bytes, "{sp}");
    }
    assert_eq!(std::fs::read(paths.qc_csv()).unwrap(), qc);
}

#[test]
fn set_overrides_reach_the_report() {
    let dir = TempDir::new().unwrap();
    let root = dir.path().join("data");
    gen(&root, "linear");
    let probe = |out: &str, extra: &[&str]| {
        let out_dir = dir.path().join(out);
        let mut args = vec!["probe", "--data-root", s(&root), "--out-dir", s(&out_dir)];
        args.extend_from_slice(extra);
        assert_eq!(code(&run(&args)), 0);
        report(&out_dir.join("report.json"))
    };
    let plain = probe("plain", &[]);
    let strict = probe("strict", &["--set", "probe.r2_min=0.5"]);
    assert_eq!(strict.header.overrides["probe.r2_min"], 0.5);
    assert_ne!(plain.header.config_hash, strict.header.config_hash);
    let encoded = |r: &AuditReport| r.cells[0].probes.iter().filter(|p| p.selection_encoded).count();
    assert!(encoded(&strict) < encoded(&plain));

    let bad = run(&["probe", "--data-root", s(&root), "--set", "probe.r2_min.x=1"]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn responder_refuses_mismatched_requests() {
    let dir = TempDir::new().unwrap();
    let root = dir.path().join("data");
    gen(&root, "linear");
    let paths = CellPaths::new(&root, "planted", "linear");
    let exchange = paths.edited_dir();
    std::fs::create_dir_all(&exchange).unwrap();
    let request = EditRequest {
        format: EDIT_FORMAT.into(),
        cell: "planted/linear".into(),
        layer: 0,
        split: Split::Test,
        row_id_digest: "0".repeat(64),
        activations: "layer_0_test.bin".into(),
        predictions: "predictions_test.bin".into(),
    };
    let ask = |req: &EditRequest| -> Refusal {
        write_json(&exchange.join("request.json"), req).unwrap();
        let _ = std::fs::remove_file(exchange.join("refusal.json"));
        assert_eq!(code(&run(&["harness", "respond", s(&exchange)])), 0);
        assert!(!exchange.join("predictions_test.bin").exists());
        read_json(&exchange.join("refusal.json")).unwrap()
    };
    assert!(ask(&request).reason.contains("digest"));
    let elsewhere = EditRequest {
        cell: "other/model".into(),
        ..request
    };
    assert!(ask(&elsewhere).reason.contains("other/model"));
}

#[test]
fn missing_layer_skips_the_cell_and_exits_2() {
    let dir = TempDir::new().unwrap();
    let root = dir.path().join("data");
    gen(&root, "broken");
    gen(&root, "linear");
    let broken = CellPaths::new(&root, "planted", "broken");
    std::fs::remove_file(broken.activation(3, Split::Train)).unwrap();
    let (status, path) = audit(&root, &dir.path().join("out"), &[]);
    assert_eq!(status, 2);
    let r = report(&path);
    assert_eq!(r.cells.len(), 1);
    assert_eq!(r.cells[0].cell(), "planted/linear");
    let hard: Vec<_> = r.hard_errors().collect();
    assert_eq!(hard.len(), 1);
    assert_eq!(hard[0].cell, "planted/broken");
    assert!(hard[0].reason.contains("layer_3_train.bin"), "{}", hard[0].reason);
}
