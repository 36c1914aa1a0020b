//! Running the parser over a dataset and scoring the results.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use dashtalk_core::catalog::EntityCatalog;
use dashtalk_core::llm::{ChatBackend, HttpBackend, HttpBackendConfig, ReplayBackend, ReplayRecord};
use dashtalk_core::parser::{scripted_replies, SemanticParser};
use dashtalk_core::prompts::{build_prompts_with, FewShot, PromptPack};
use dashtalk_core::resolver::{resolve_extraction, DEFAULT_THRESHOLD};
use dashtalk_core::similarity::{SimilarityProvider, TrigramCosine};
use dashtalk_core::vocab::{GlobalVocabulary, NULL_TOKEN};
use futures::StreamExt;
use serde::Deserialize;

use crate::dataset::{load_dataset, EvalRecord};
use crate::report::{AccuracyReport, RunInfo};
use crate::score::{score_record, Prediction, RecordScore};

pub const DEFAULT_CONCURRENCY: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LlmMode {
    Live,
    Replay,
}

impl LlmMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LlmMode::Live => "live",
            LlmMode::Replay => "replay",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset_path: PathBuf,
    pub mode: LlmMode,
    pub replay_file: Option<PathBuf>,
    pub few_shot: bool,
    pub threshold: f64,
    pub catalog_dir: PathBuf,
    pub concurrency: usize,
    pub output_path: Option<PathBuf>,
}

impl RunConfig {
    pub fn replay(dataset: impl Into<PathBuf>, replay_file: impl Into<PathBuf>, catalog_dir: impl Into<PathBuf>) -> Self {
        Self {
            dataset_path: dataset.into(),
            mode: LlmMode::Replay,
            replay_file: Some(replay_file.into()),
            few_shot: true,
            threshold: DEFAULT_THRESHOLD,
            catalog_dir: catalog_dir.into(),
            concurrency: DEFAULT_CONCURRENCY,
            output_path: None,
        }
    }
}

pub fn prompt_pack(few_shot: bool) -> PromptPack {
    let mode = if few_shot { FewShot::On } else { FewShot::Off };
    build_prompts_with(&GlobalVocabulary::embedded(), mode)
}

/// Single-turn predictor: two-pass parse, then auto-correction only.
pub struct Evaluator {
    parser: SemanticParser,
    vocab: GlobalVocabulary,
    catalog: EntityCatalog,
    similarity: Arc<dyn SimilarityProvider>,
    threshold: f64,
}

impl Evaluator {
    pub fn new(pack: PromptPack, llm: Arc<dyn ChatBackend>, catalog: EntityCatalog, threshold: f64) -> Self {
        Self {
            parser: SemanticParser::new(Arc::new(pack), llm),
            vocab: GlobalVocabulary::embedded(),
            catalog,
            similarity: Arc::new(TrigramCosine),
            threshold,
        }
    }

    pub async fn predict(&self, query: &str) -> Prediction {
        let parsed = match self.parser.parse(query).await {
            Ok(p) => p,
            Err(e) => {
                tracing::warn!(query, error = %e, "parse failed; record scored as failed");
                return Prediction::failed();
            }
        };
        match resolve_extraction(&parsed.result, &self.catalog, &self.vocab, self.similarity.as_ref(), self.threshold) {
            Ok(r) => Prediction::from_resolution(&r),
            Err(e) => {
                tracing::warn!(query, error = %e, "resolution failed; record scored as failed");
                Prediction::failed()
            }
        }
    }

    /// Scores every record, at most `concurrency` in flight, results in
    /// dataset order.
    pub async fn score_all(&self, records: &[EvalRecord], concurrency: usize) -> Vec<RecordScore> {
        futures::stream::iter(records)
            .map(|r| async move { score_record(&self.predict(&r.query).await, r) })
            .buffered(concurrency.max(1))
            .collect()
            .await
    }
}

pub async fn run_eval(config: &RunConfig) -> anyhow::Result<AccuracyReport> {
    let dataset = load_dataset(&config.dataset_path)?;
    let llm: Arc<dyn ChatBackend> = match config.mode {
        LlmMode::Replay => {
            let path = config.replay_file.as_ref().context("replay mode needs a replay file")?;
            Arc::new(ReplayBackend::from_file(path)?)
        }
        LlmMode::Live => Arc::new(HttpBackend::new(HttpBackendConfig::from_env()?)?),
    };
    let catalog = EntityCatalog::from_fixture_dir(&config.catalog_dir)
        .with_context(|| format!("loading catalog from {}", config.catalog_dir.display()))?;
    let evaluator = Evaluator::new(prompt_pack(config.few_shot), llm, catalog, config.threshold);
    let scores = evaluator.score_all(&dataset.records, config.concurrency).await;
    let run = RunInfo {
        dataset: config.dataset_path.display().to_string(),
        dataset_sha256: dataset.sha256.clone(),
        mode: config.mode.as_str().into(),
        few_shot: config.few_shot,
        threshold: config.threshold,
    };
    let report = AccuracyReport::build(run, &dataset.records, scores);
    if let Some(out) = &config.output_path {
        std::fs::write(out, report.to_json()).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(report)
}

/// Replay records under which the parser reproduces each record's ground
/// truth exactly.
pub fn oracle_replies(pack: &PromptPack, records: &[EvalRecord]) -> Vec<ReplayRecord> {
    records
        .iter()
        .flat_map(|r| {
            let first = r.widget_type.map_or(NULL_TOKEN, |t| t.as_str());
            let second = Prediction::from_truth(r).draft.to_model_json();
            scripted_replies(pack, &r.query, first, &second)
        })
        .collect()
}

/// One scripted exchange: what the model says on each pass for a query.
#[derive(Debug, Clone, Deserialize)]
pub struct ScriptLine {
    pub query: String,
    pub widget_type_reply: String,
    pub extraction_reply: String,
}

pub fn load_script(path: &Path) -> anyhow::Result<Vec<ScriptLine>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

pub fn script_replies(pack: &PromptPack, script: &[ScriptLine]) -> Vec<ReplayRecord> {
    script
        .iter()
        .flat_map(|s| scripted_replies(pack, &s.query, &s.widget_type_reply, &s.extraction_reply))
        .collect()
}

pub fn write_replay(path: &Path, records: &[ReplayRecord]) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(records)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
