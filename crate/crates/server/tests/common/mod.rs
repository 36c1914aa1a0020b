#![allow(dead_code)]

use std::sync::Arc;

use chrono::{TimeZone, Utc};
use dashtalk_core::catalog::{CatalogSource, EntityCatalog, KnowledgeBase};
use dashtalk_core::llm::{ReplayBackend, ReplayRecord};
use dashtalk_core::parser::{scripted_replies, SemanticParser};
use dashtalk_core::prompts::build_prompts;
use dashtalk_core::session::{FixedClock, SequentialIds, SessionEngine};
use dashtalk_core::similarity::TrigramCosine;
use dashtalk_core::vocab::GlobalVocabulary;
use dashtalk_server::api::{AppState, PreviewSource};
use dashtalk_server::mock::default_fixtures_dir;
use dashtalk_server::store::{DashboardStore, SessionStore};

pub const APPDATA_Q: &str = "time series graph of appdata service's mean latency";
pub const APPDATA_R: &str =
    r#"{"type": "TIME_SERIES", "metric": "latency", "aggregation": "MEAN", "filter": {"service.name": "appdata"}}"#;
pub const CATALOGUE_Q: &str = "p99 latency of catalogue over time";
pub const CATALOGUE_R: &str =
    r#"{"type": "TIME_SERIES", "metric": "latency", "aggregation": "P99", "filter": {"service.name": "catalogue"}}"#;

pub fn script() -> Vec<ReplayRecord> {
    let pack = build_prompts(&GlobalVocabulary::embedded());
    let mut r = scripted_replies(&pack, APPDATA_Q, "TIME_SERIES", APPDATA_R);
    r.extend(scripted_replies(&pack, CATALOGUE_Q, "TIME_SERIES", CATALOGUE_R));
    r
}

pub fn fixture_catalog() -> EntityCatalog {
    EntityCatalog::from_fixture_dir(&default_fixtures_dir()).unwrap()
}

pub fn engine(catalog: EntityCatalog) -> SessionEngine {
    let vocab = Arc::new(GlobalVocabulary::embedded());
    let pack = Arc::new(build_prompts(&vocab));
    let llm = Arc::new(ReplayBackend::from_records(script()));
    SessionEngine::new(
        SemanticParser::new(pack, llm),
        Arc::new(KnowledgeBase::new(vocab, catalog)),
        Arc::new(TrigramCosine),
    )
    .with_clock(Arc::new(FixedClock(Utc.with_ymd_and_hms(2024, 5, 1, 12, 0, 0).unwrap())))
    .with_ids(Arc::new(SequentialIds::default()))
}

pub fn app_state(
    engine: SessionEngine,
    dashboard: DashboardStore,
    catalog_source: Option<Arc<dyn CatalogSource>>,
    preview: Option<PreviewSource>,
) -> Arc<AppState> {
    Arc::new(AppState {
        engine: Arc::new(engine),
        sessions: SessionStore::new(16),
        dashboard,
        catalog_source,
        preview,
    })
}

pub struct Client {
    pub base: String,
    pub http: reqwest::Client,
}

impl Client {
    pub async fn serve(state: Arc<AppState>) -> Self {
        let (addr, _handle) = dashtalk_server::api::spawn(state, "127.0.0.1:0".parse().unwrap())
            .await
            .unwrap();
        Self {
            base: format!("http://{addr}"),
            http: reqwest::Client::new(),
        }
    }

    pub async fn post(&self, path: &str, body: serde_json::Value) -> (u16, serde_json::Value) {
        let r = self.http.post(format!("{}{path}", self.base)).json(&body).send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }

    pub async fn get(&self, path: &str) -> (u16, serde_json::Value) {
        let r = self.http.get(format!("{}{path}", self.base)).send().await.unwrap();
        (r.status().as_u16(), r.json().await.unwrap())
    }

    pub async fn new_session(&self) -> String {
        let (status, body) = self.post("/api/sessions", serde_json::json!({})).await;
        assert_eq!(status, 201);
        body["session_id"].as_str().unwrap().to_string()
    }

    pub async fn message(&self, sid: &str, body: serde_json::Value) -> (u16, serde_json::Value) {
        self.post(&format!("/api/sessions/{sid}/messages"), body).await
    }
}
