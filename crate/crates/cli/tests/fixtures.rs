//! Shipped evaluation fixtures: the synthetic detection logs under
//! `fixtures/eval/` have hand-computable metrics, and the committed golden
//! report must match the binary's output byte for byte.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/eval")
}

fn eval(args: &[&str], log: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqcloak"))
        .arg("eval")
        .arg("--log")
        .arg(log)
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn seqcloak eval")
}

#[test]
fn golden_report_matches_fixture_log() {
    let tmp = tempfile::tempdir().unwrap();
    let out = eval(&[], &fixtures_dir().join("detections.jsonl"), tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let fresh = std::fs::read(tmp.path().join("report.json")).unwrap();
    let golden = std::fs::read(fixtures_dir().join("golden/report.json")).unwrap();
    assert_eq!(fresh, golden, "report.json drifted from the committed golden");

    // Cross-check the golden against hand-computed values so a stale golden
    // cannot bless a regression. Per video (tau 0.3, tau_iou 0.1, alpha 0.1):
    //   clean    conf 0.9 x5, IoU 1      -> SeqASR 0,   CVaR 90
    //   cloaked  no boxes x5             -> SeqASR 100, CVaR 0, neutralized
    //   ramp     conf 0.1..=1.0, IoU 1   -> SeqASR 20,  CVaR 100
    //   flicker  conf .9/.1/.9/.1, IoU 1 -> SeqASR 50,  CVaR 90
    //   drift    conf 0.9, IoU .05/.5    -> SeqASR 50,  CVaR 90 (IoU gate)
    let report: serde_json::Value = serde_json::from_slice(&fresh).unwrap();
    let expected = [
        ("clean", 0.0, 90.0, false),
        ("cloaked", 100.0, 0.0, true),
        ("ramp", 20.0, 100.0, false),
        ("flicker", 50.0, 90.0, false),
        ("drift", 50.0, 90.0, false),
    ];
    for (id, seqasr, cvar, flag) in expected {
        let v = &report["per_video"][id];
        assert_eq!(v["seqasr"], seqasr, "{id} SeqASR");
        assert_eq!(v["cvar"], cvar, "{id} CVaR");
        assert_eq!(v["ndr_flag"], flag, "{id} NDR flag");
    }
    let ds = &report["dataset"];
    assert_eq!(ds["videos"], 5);
    assert_eq!(ds["seqasr_mean"], 44.0);
    assert_eq!(ds["cvar_mean"], 74.0);
    assert_eq!(ds["ndr_percent"], 20.0);
    // Population stds: sqrt(1144) and sqrt(1384).
    let seqasr_std = ds["seqasr_std"].as_f64().unwrap();
    let cvar_std = ds["cvar_std"].as_f64().unwrap();
    assert!((seqasr_std - 1144f64.sqrt()).abs() < 1e-12);
    assert!((cvar_std - 1384f64.sqrt()).abs() < 1e-12);
}

#[test]
fn eval_rerun_is_byte_identical() {
    let log = fixtures_dir().join("detections.jsonl");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(eval(&[], &log, a.path()).status.success());
    assert!(eval(&[], &log, b.path()).status.success());
    for name in ["report.json", "report.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between identical eval runs");
    }
}

#[test]
fn tau_out_of_range_exits_with_usage_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = eval(
        &["--tau", "2.0"],
        &fixtures_dir().join("detections.jsonl"),
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2), "tau 2.0 should be a usage error");
    assert!(String::from_utf8_lossy(&out.stderr).contains("tau"));
}

#[test]
fn ndr_modes_diverge_on_divergence_fixture() {
    // One video: conf stuck at 0.1 every frame, one frame with IoU 0.5.
    // Maxima conjunction sees the localized frame (NDR 0); the per-frame
    // reading sees confidence below tau everywhere (NDR 100).
    let log = fixtures_dir().join("divergence.jsonl");
    let ndr = |args: &[&str]| -> f64 {
        let tmp = tempfile::tempdir().unwrap();
        let out = eval(args, &log, tmp.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let report: serde_json::Value =
            serde_json::from_slice(&std::fs::read(tmp.path().join("report.json")).unwrap())
                .unwrap();
        report["dataset"]["ndr_percent"].as_f64().unwrap()
    };
    let default_mode = ndr(&[]);
    let per_frame = ndr(&["--ndr-mode", "per-frame-failure"]);
    assert_eq!(default_mode, 0.0);
    assert_eq!(per_frame, 100.0);
}
