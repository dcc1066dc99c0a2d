#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::json;

fn judge_audit(args: &[&str], manifest: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_judge-audit"))
        .args(args)
        .arg("--manifest")
        .arg(manifest)
        .output()
        .unwrap()
}

#[test]
fn replay_flow_writes_every_report() {
    let dir = tempfile::tempdir().unwrap();
    let w = common::paper_fixture(dir.path());
    for cmd in ["ingest", "run-pairwise", "run-scoring", "analyze-transitivity", "analyze-conformal", "report"] {
        let out = judge_audit(&[cmd], &w.manifest);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = dir.path().join("out");
    for f in [
        "ingest/corpus.jsonl",
        "stores/verdicts.jsonl",
        "stores/likert.jsonl",
        "transitivity/violation_stats.csv",
        "transitivity/rankings.csv",
        "conformal/conformal_cells.csv",
        "conformal/width_agreement.csv",
        "summary.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn overrides_narrow_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let w = common::paper_fixture(dir.path());
    let out = judge_audit(&["ingest", "--docs", "3", "--systems", "0,2,4"], &w.manifest);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    // 3 pairs × 3 repetitions × 3 docs × 2 criteria × 2 judges
    assert!(stdout.contains("3 docs, 3 systems, 9 instances; budget 108 pairwise + 36 scoring calls"), "{stdout}");
}

#[test]
fn missing_cache_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = common::corpus_jsonl(1, &common::systems(), &|_, _, _| "3.0".into());
    let manifest = json!({"corpus": "corpus.jsonl", "judges": common::judges(), "seed": 1});
    let w = common::write_fixture(dir.path(), &text, &[], manifest);
    let out = judge_audit(&["run-pairwise"], &w.manifest);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cache"));
}

#[test]
fn invalid_manifest_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = common::corpus_jsonl(1, &common::systems(), &|_, _, _| "3.0".into());
    let manifest = json!({"corpus": "corpus.jsonl", "judges": common::judges(), "seed": 1, "k": 0});
    let w = common::write_fixture(dir.path(), &text, &[], manifest);
    assert_eq!(judge_audit(&["ingest"], &w.manifest).status.code(), Some(2));

    let manifest = json!({"corpus": "corpus.jsonl", "judges": common::judges(), "seed": 1, "colour": "red"});
    let w = common::write_fixture(dir.path(), &text, &[], manifest);
    assert_eq!(judge_audit(&["ingest"], &w.manifest).status.code(), Some(2));

    let out = Command::new(env!("CARGO_BIN_EXE_judge-audit")).arg("ingest").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn live_mode_without_endpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = common::corpus_jsonl(1, &common::systems(), &|_, _, _| "3.0".into());
    let manifest = json!({"corpus": "corpus.jsonl", "judges": common::judges(), "seed": 1});
    let w = common::write_fixture(dir.path(), &text, &[], manifest);
    let out = judge_audit(&["run-scoring", "--mode", "live"], &w.manifest);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
