#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use dashtalk_core::catalog::EntityCatalog;
use dashtalk_core::llm::{ReplayBackend, ReplayRecord};
use dashtalk_core::resolver::DEFAULT_THRESHOLD;
use dashtalk_eval::dataset::{load_dataset, Dataset, EvalRecord};
use dashtalk_eval::report::{AccuracyReport, RunInfo};
use dashtalk_eval::run::{oracle_replies, prompt_pack, Evaluator};

pub fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn catalog_dir() -> PathBuf {
    repo().join("fixtures/monitoring")
}

pub fn catalog() -> EntityCatalog {
    EntityCatalog::from_fixture_dir(&catalog_dir()).unwrap()
}

pub fn synthetic() -> Dataset {
    load_dataset(&repo().join("datasets/synthetic.jsonl")).unwrap()
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn run_info(sha: &str) -> RunInfo {
    RunInfo {
        dataset: "test".into(),
        dataset_sha256: sha.into(),
        mode: "replay".into(),
        few_shot: true,
        threshold: DEFAULT_THRESHOLD,
    }
}

/// Scores `records` with the parser answering from `replies`.
pub async fn evaluate(records: &[EvalRecord], sha: &str, replies: Vec<ReplayRecord>) -> AccuracyReport {
    let evaluator = Evaluator::new(
        prompt_pack(true),
        Arc::new(ReplayBackend::from_records(replies)),
        catalog(),
        DEFAULT_THRESHOLD,
    );
    let scores = evaluator.score_all(records, 4).await;
    AccuracyReport::build(run_info(sha), records, scores)
}

/// Replies that reproduce `answers` (one per record) for the queries of
/// `records`.
pub fn replies_answering(records: &[EvalRecord], answers: &[EvalRecord]) -> Vec<ReplayRecord> {
    let relabelled: Vec<EvalRecord> = records
        .iter()
        .zip(answers)
        .map(|(r, a)| EvalRecord {
            query: r.query.clone(),
            ..a.clone()
        })
        .collect();
    oracle_replies(&prompt_pack(true), &relabelled)
}

/// Exact two-sided McNemar p-value from integer binomial coefficients.
pub fn mcnemar_oracle(b: usize, c: usize) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let mut row: Vec<u128> = vec![1];
    for _ in 0..n {
        let mut next = vec![1u128; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    let tail: u128 = row[..=b.min(c)].iter().sum();
    let p = 2.0 * tail as f64 / 2f64.powi(n as i32);
    p.min(1.0)
}
