mod common;

use std::fs;

use common::{check_golden, fixtures, golden_artifacts, offline_config, MockSet};
use veriscore::corpus::PromptKind;
use veriscore::pipeline::run_pipeline;

#[test]
fn artifacts_match_golden_files() {
    let failures: Vec<String> = golden_artifacts()
        .iter()
        .filter_map(|(name, actual)| check_golden(name, actual).err())
        .collect();
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

#[test]
fn mock_run_outputs_match_golden_files() {
    let dir = fixtures().join("e2e");
    let run = tempfile::tempdir().unwrap();
    let mocks = MockSet::load(&dir);
    run_pipeline(
        &offline_config(run.path()),
        &mocks.backends(),
        &dir.join("prompts.jsonl"),
        &dir.join("responses.jsonl"),
        PromptKind::NonQa,
    )
    .unwrap();
    let failures: Vec<String> = [
        ("claims.jsonl", "e2e_claims.jsonl"),
        ("scorecard.csv", "e2e_scorecard.csv"),
        ("scorecard.txt", "e2e_scorecard.txt"),
        ("leaderboard.txt", "e2e_leaderboard.txt"),
    ]
    .iter()
    .filter_map(|(file, golden)| {
        let actual = fs::read_to_string(run.path().join(file)).unwrap();
        check_golden(golden, &actual).err()
    })
    .collect();
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}
