use std::path::Path;
use std::process::Command;

use serde_json::{json, Value};
use wfgame_cli::config::{ExperimentConfig, ExperimentKind};
use wfgame_cli::experiments::run_uniqueness_mc;
use wfgame_cli::CliError;

fn scenario() -> Value {
    json!({"generated": {
        "users": 2, "carriers": 4, "channel_order": 1,
        "path_loss_exponent": 2.5, "cross": {"ratio": 2.0}, "snr_db": 5.0
    }})
}

fn run(dir: &Path, sub: &str, cfg: &Value, out: &str) -> (i32, String) {
    let cfg_path = dir.join("cfg.json");
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_wfgame"))
        .args([sub, "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.join(out))
        .output()
        .unwrap();
    (o.status.code().unwrap(), String::from_utf8_lossy(&o.stderr).into_owned())
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn config_defaults_and_validation() {
    let cfg = ExperimentConfig::from_json(&json!({"scenario": scenario()}).to_string()).unwrap();
    assert_eq!(cfg.trials, 500);
    assert_eq!(cfg.sweep(), vec![None]);
    assert_eq!(cfg.ratio_label(None), "2");

    for bad in [
        json!({"trials": 0, "scenario": scenario()}),
        json!({"d_ratios": [1.0, -2.0], "scenario": scenario()}),
        json!({"scenario": scenario(), "unknown_key": 1}),
        json!({"kind": "psd"}),
    ] {
        let e = ExperimentConfig::from_json(&bad.to_string()).unwrap_err();
        assert_eq!(e.exit_code(), 1, "{bad}: {e}");
    }
    let mismatch = ExperimentConfig::from_json(&json!({"kind": "psd", "scenario": scenario()}).to_string()).unwrap();
    assert!(matches!(run_uniqueness_mc(&mismatch, Some(1)), Err(CliError::Config(_))));
    assert!(mismatch.expect_kind(ExperimentKind::Psd).is_ok());
}

#[test]
fn sweeps_share_fading_across_ratios() {
    let cfg = ExperimentConfig::from_json(
        &json!({"d_ratios": [1.0, 4.0], "scenario": scenario()}).to_string(),
    )
    .unwrap();
    let a = cfg.channels(Some(1.0), 3).unwrap();
    let b = cfg.channels(Some(4.0), 3).unwrap();
    assert_eq!(a.taps, b.taps);
    assert_ne!(a.distance, b.distance);
}

#[test]
fn csv_headers_follow_the_documented_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let base = json!({"seed": 1, "trials": 2, "scenario": scenario()});
    assert_eq!(run(d, "montecarlo", &base, "mc.csv").0, 0);
    assert_eq!(header(&d.join("mc.csv")), "d_ratio,condition,prob,trials");
    assert_eq!(run(d, "solve", &base, "psd.csv").0, 0);
    assert_eq!(header(&d.join("psd.csv")), "d_ratio,trial,user,carrier,power");
    assert_eq!(run(d, "rate-region", &base, "region.csv").0, 0);
    assert_eq!(header(&d.join("region.csv")), "d_ratio,trial,provenance,label,r1,r2");
    let meta: Value = serde_json::from_slice(&std::fs::read(d.join("mc.json")).unwrap()).unwrap();
    assert_eq!(meta["trials"], 2);
    let rows = std::fs::read_to_string(d.join("mc.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 14);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (code, err) = run(d, "solve", &json!({"trials": 0, "scenario": scenario()}), "x.csv");
    assert_eq!(code, 1, "{err}");
    let (code, _) = run(d, "montecarlo", &json!({"kind": "psd", "scenario": scenario()}), "x.csv");
    assert_eq!(code, 1);
    // the matrix oracle only handles up to 8 carriers
    let big = json!({"trials": 1, "scenario": {"generated": {
        "users": 2, "carriers": 16, "channel_order": 1,
        "path_loss_exponent": 2.5, "cross": {"ratio": 2.0}, "snr_db": 5.0
    }}});
    assert_eq!(run(d, "verify-theorem1", &big, "t.json").0, 1);
    let missing = Command::new(env!("CARGO_BIN_EXE_wfgame"))
        .args(["solve", "--config", "/nonexistent/cfg.json"])
        .status()
        .unwrap();
    assert_eq!(missing.code(), Some(1));
}

#[test]
fn game_errors_map_to_exit_codes() {
    use wfgame::GameError;
    assert_eq!(CliError::Game(GameError::Numeric("nan".into())).exit_code(), 3);
    assert_eq!(CliError::Game(GameError::InvalidInput("x".into())).exit_code(), 1);
    assert_eq!(CliError::Violation("x".into()).exit_code(), 2);
}
