//! Runs the dashboard-building API.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::Parser;
use dashtalk_core::catalog::{
    refresh_interval_from_env, CatalogSource, EntityCatalog, KnowledgeBase, MonitoringClient,
    StaticCatalog,
};
use dashtalk_core::llm::{ChatBackend, HttpBackend, HttpBackendConfig, ReplayBackend};
use dashtalk_core::parser::SemanticParser;
use dashtalk_core::prompts::{build_prompts_with, FewShot};
use dashtalk_core::session::SessionEngine;
use dashtalk_core::similarity::{EmbeddingSimilarity, SimilarityProvider, TrigramCosine};
use dashtalk_core::vocab::GlobalVocabulary;
use dashtalk_server::api::{self, AppState, PreviewSource};
use dashtalk_server::store::{DashboardStore, SessionStore};

#[derive(Debug, Parser)]
#[command(version, about = "Conversational dashboard widget API")]
struct Args {
    #[arg(long, env = "PORT", default_value_t = 8080)]
    port: u16,
    /// Serve completions from a replay file instead of a live endpoint.
    #[arg(long)]
    llm_replay: Option<PathBuf>,
    #[arg(long, env = "DASHBOARD_STORE_PATH")]
    dashboard_store: Option<PathBuf>,
    /// Load entity names from fixture files instead of the monitoring API.
    #[arg(long)]
    catalog_fixtures: Option<PathBuf>,
    #[arg(long, env = "KB_CACHE_PATH")]
    kb_cache: Option<PathBuf>,
    #[arg(long, env = "SIMILARITY_THRESHOLD", default_value_t = dashtalk_core::resolver::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, env = "SESSION_CAPACITY", default_value_t = dashtalk_server::store::DEFAULT_SESSION_CAPACITY)]
    session_capacity: usize,
    #[arg(long, value_enum, default_value = "on")]
    few_shot: FewShotArg,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum FewShotArg {
    On,
    Off,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt().init();
    let args = Args::parse();

    let vocab = Arc::new(GlobalVocabulary::embedded());
    let few_shot = match args.few_shot {
        FewShotArg::On => FewShot::On,
        FewShotArg::Off => FewShot::Off,
    };
    let prompts = Arc::new(build_prompts_with(&vocab, few_shot));
    let llm: Arc<dyn ChatBackend> = match &args.llm_replay {
        Some(path) => Arc::new(ReplayBackend::from_file(path)?),
        None => Arc::new(HttpBackend::new(HttpBackendConfig::from_env()?)?),
    };

    let (source, preview): (Option<Arc<dyn CatalogSource>>, Option<PreviewSource>) =
        match &args.catalog_fixtures {
            Some(dir) => (
                Some(Arc::new(StaticCatalog(EntityCatalog::from_fixture_dir(dir)?))),
                None,
            ),
            None => match MonitoringClient::from_env() {
                Ok(client) => {
                    let token = std::env::var("MONITORING_API_TOKEN").ok();
                    let preview = PreviewSource::new(client.base().clone(), token);
                    (Some(Arc::new(client)), Some(preview))
                }
                Err(e) => {
                    tracing::warn!(error = %e, "no monitoring API; entity catalog stays empty");
                    (None, None)
                }
            },
        };

    let mut kb = KnowledgeBase::new(Arc::clone(&vocab), EntityCatalog::empty("none"))
        .with_refresh_interval(refresh_interval_from_env());
    if let Some(path) = &args.kb_cache {
        kb = kb.with_cache(path);
    }
    let kb = Arc::new(kb);
    if let Some(source) = &source {
        let outcome = kb.refresh(source.as_ref()).await;
        tracing::info!(?outcome, "initial catalog load");
        kb.spawn_refresher(Arc::clone(source));
    }

    let similarity: Arc<dyn SimilarityProvider> = match EmbeddingSimilarity::from_env() {
        Some(e) => Arc::new(e),
        None => Arc::new(TrigramCosine),
    };
    let engine = SessionEngine::new(SemanticParser::new(prompts, llm), kb, similarity)
        .with_threshold(args.threshold);
    let dashboard = match &args.dashboard_store {
        Some(path) => DashboardStore::open(path)?,
        None => DashboardStore::in_memory(),
    };
    let state = Arc::new(AppState {
        engine: Arc::new(engine),
        sessions: SessionStore::new(args.session_capacity),
        dashboard,
        catalog_source: source,
        preview,
    });

    let addr = SocketAddr::from(([0, 0, 0, 0], args.port));
    let (addr, handle) = api::spawn(state, addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    tracing::info!(%addr, "listening");
    tokio::select! {
        _ = handle => {}
        _ = tokio::signal::ctrl_c() => tracing::info!("shutting down"),
    }
    Ok(())
}
