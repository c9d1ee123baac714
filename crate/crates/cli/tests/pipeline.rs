mod common;

use std::process::Command;

use carebi_cli::config;
use carebi_cli::error::CliError;
use carebi_cli::manifest::RunManifest;

#[test]
fn bundled_run_matches_golden_and_repeats() {
    let a = tempfile::tempdir().unwrap();
    common::run_bundled(a.path()).unwrap();
    if common::maybe_update_golden(a.path()) {
        eprintln!("golden files regenerated");
    }
    let diff = common::diff_trees(a.path(), &common::golden_dir());
    assert!(diff.is_empty(), "golden mismatch:\n{}", diff.join("\n"));

    // Second run in place: identical hashes, stages idempotent.
    let before = RunManifest::load(a.path()).unwrap().unwrap();
    common::run_bundled(a.path()).unwrap();
    let after = RunManifest::load(a.path()).unwrap().unwrap();
    assert_eq!(before.config_hash, after.config_hash);
    for (name, rec) in &before.stages {
        assert_eq!(rec.outputs, after.stages[name].outputs, "stage {name}");
    }
}

#[test]
fn missing_dependency_names_the_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = config::load(Some(&common::data_dir().join("carebi.toml")), &[], None, Some(dir.path())).unwrap();
    carebi_cli::run_stage("prep", &ctx).unwrap();
    match carebi_cli::run_stage("efa", &ctx) {
        Err(CliError::MissingArtifact { path, producer, .. }) => {
            assert_eq!(path, "corr/polychoric.json");
            assert_eq!(producer, "corr");
        }
        other => panic!("expected a dependency error, got {other:?}"),
    }
    // Partial report with explicit gaps.
    carebi_cli::run_stage("report", &ctx).unwrap();
    let md = std::fs::read_to_string(dir.path().join("report/report.md")).unwrap();
    assert!(md.contains("`corr/kmo.json` is missing"));
    assert!(md.contains("## Burden categories"));
}

#[test]
fn cli_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_carebi");
    let empty = tempfile::tempdir().unwrap();
    let out = Command::new(bin).args(["report", "--out"]).arg(empty.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no artifacts"));

    let out = Command::new(bin).args(["corr", "--out"]).arg(empty.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("prep/summary.json"));

    let out = Command::new(bin).args(["prep", "--stage-overrides", "efa.n_sims=3"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn preset_thresholds_reach_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::data_dir().join("carebi.toml");
    let o = vec!["classify.preset=paper-2022".to_string(), "stages=[\"prep\",\"corr\",\"efa\",\"cfa\",\"score\",\"classify\",\"report\"]".into(), "corr.weights=unit".into()];
    let ctx = config::load(Some(&cfg), &o, None, Some(dir.path())).unwrap();
    carebi_cli::run_pipeline(&ctx, |_, _| {}).unwrap();
    let md = std::fs::read_to_string(dir.path().join("report/report.md")).unwrap();
    assert!(md.contains("Method: preset:paper-2022. Boundaries: (30, 50)."), "{md}");
    assert!(md.contains("| Low | 0-30 |"));
    assert!(md.contains("| Moderate | 31-50 |"));
    assert!(md.contains("| High | 51-100 |"));
}

#[test]
fn bundled_dataset_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = config::load(Some(&common::data_dir().join("carebi.toml")), &[], None, Some(dir.path())).unwrap();
    carebi_cli::run_stage("simulate", &ctx).unwrap();
    let fresh = std::fs::read(dir.path().join("simulate/raw.csv")).unwrap();
    let bundled = std::fs::read(common::data_dir().join("synthetic_raw.csv")).unwrap();
    assert!(fresh == bundled, "simulate no longer reproduces data/synthetic_raw.csv");
}
