//! Instance-specific knowledge: entity names fetched from the monitoring API,
//! held behind an atomically replaced snapshot and refreshed periodically.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::vocab::GlobalVocabulary;

pub const DEFAULT_REFRESH_SECONDS: u64 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntityKind {
    Services,
    Applications,
    Endpoints,
    SloConfigs,
}

impl EntityKind {
    pub const ALL: [EntityKind; 4] = [
        EntityKind::Services,
        EntityKind::Applications,
        EntityKind::Endpoints,
        EntityKind::SloConfigs,
    ];

    /// Path segment under `{base}/api/`; also the fixture file stem.
    pub fn path(self) -> &'static str {
        match self {
            EntityKind::Services => "services",
            EntityKind::Applications => "applications",
            EntityKind::Endpoints => "endpoints",
            EntityKind::SloConfigs => "slo-configs",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.path())
    }
}

/// One entity as served by the monitoring API.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedEntity {
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCatalog {
    pub services: BTreeSet<String>,
    pub applications: BTreeSet<String>,
    pub endpoints: BTreeSet<String>,
    pub slo_configs: BTreeSet<String>,
    pub fetched_at: DateTime<Utc>,
    pub source_instance: String,
}

impl EntityCatalog {
    pub fn empty(source_instance: impl Into<String>) -> Self {
        Self {
            services: BTreeSet::new(),
            applications: BTreeSet::new(),
            endpoints: BTreeSet::new(),
            slo_configs: BTreeSet::new(),
            fetched_at: DateTime::<Utc>::UNIX_EPOCH,
            source_instance: source_instance.into(),
        }
    }

    pub fn names(&self, kind: EntityKind) -> &BTreeSet<String> {
        match kind {
            EntityKind::Services => &self.services,
            EntityKind::Applications => &self.applications,
            EntityKind::Endpoints => &self.endpoints,
            EntityKind::SloConfigs => &self.slo_configs,
        }
    }

    pub fn names_mut(&mut self, kind: EntityKind) -> &mut BTreeSet<String> {
        match kind {
            EntityKind::Services => &mut self.services,
            EntityKind::Applications => &mut self.applications,
            EntityKind::Endpoints => &mut self.endpoints,
            EntityKind::SloConfigs => &mut self.slo_configs,
        }
    }

    /// Replaces one entity set, dropping blank names.
    pub fn set_names<I, S>(&mut self, kind: EntityKind, names: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        *self.names_mut(kind) = names
            .into_iter()
            .map(Into::into)
            .filter(|n: &String| !n.trim().is_empty())
            .collect();
    }

    pub fn is_empty(&self) -> bool {
        EntityKind::ALL.iter().all(|k| self.names(*k).is_empty())
    }

    /// Reads `services.json`, `applications.json`, `endpoints.json` and
    /// `slo-configs.json` (arrays of `{"name": ...}`) from a directory.
    pub fn from_fixture_dir(dir: &Path) -> Result<Self, CatalogError> {
        let mut catalog = Self::empty(format!("fixture:{}", dir.display()));
        for kind in EntityKind::ALL {
            let path = dir.join(format!("{}.json", kind.path()));
            let text = std::fs::read_to_string(&path).map_err(|e| CatalogError::Io {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let entities: Vec<NamedEntity> =
                serde_json::from_str(&text).map_err(|e| CatalogError::Io {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
            catalog.set_names(kind, entities.into_iter().map(|e| e.name));
        }
        catalog.fetched_at = Utc::now();
        Ok(catalog)
    }

    pub fn save(&self, path: &Path) -> Result<(), CatalogError> {
        let text = serde_json::to_string_pretty(self).expect("catalog serializes");
        std::fs::write(path, text).map_err(|e| CatalogError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let io = |e: &dyn fmt::Display| CatalogError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let text = std::fs::read_to_string(path).map_err(|e| io(&e))?;
        serde_json::from_str(&text).map_err(|e| io(&e))
    }
}

#[derive(Debug, Error, Clone)]
pub enum CatalogError {
    #[error("monitoring API rejected the credentials ({endpoint})")]
    Authentication { endpoint: EntityKind },
    #[error("partial catalog: failed to fetch {}", .failed.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(", "))]
    Partial {
        failed: Vec<EndpointFailure>,
        /// Successfully fetched sets; failed ones are empty.
        catalog: Box<EntityCatalog>,
    },
    #[error("monitoring client misconfigured: {0}")]
    Config(String),
    #[error("catalog file {path:?}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndpointFailure {
    pub endpoint: EntityKind,
    pub message: String,
}

impl fmt::Display for EndpointFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.endpoint, self.message)
    }
}

/// Anything that can produce a fresh catalog.
#[async_trait]
pub trait CatalogSource: Send + Sync {
    async fn fetch(&self) -> Result<EntityCatalog, CatalogError>;
}

/// A fixed catalog; used for offline evaluation and tests.
#[derive(Debug, Clone)]
pub struct StaticCatalog(pub EntityCatalog);

#[async_trait]
impl CatalogSource for StaticCatalog {
    async fn fetch(&self) -> Result<EntityCatalog, CatalogError> {
        let mut c = self.0.clone();
        c.fetched_at = Utc::now();
        Ok(c)
    }
}

/// REST client for the monitoring API's entity endpoints.
#[derive(Debug, Clone)]
pub struct MonitoringClient {
    base: Url,
    token: String,
    http: reqwest::Client,
}

impl MonitoringClient {
    pub fn new(base: Url, token: impl Into<String>) -> Result<Self, CatalogError> {
        let token = token.into();
        if token.is_empty() {
            return Err(CatalogError::Config("auth token must not be empty".into()));
        }
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| CatalogError::Config(e.to_string()))?;
        Ok(Self { base, token, http })
    }

    pub fn from_env() -> Result<Self, CatalogError> {
        let base = std::env::var("MONITORING_API_URL")
            .map_err(|_| CatalogError::Config("MONITORING_API_URL is not set".into()))?;
        let base = Url::parse(&base).map_err(|e| CatalogError::Config(e.to_string()))?;
        let token = std::env::var("MONITORING_API_TOKEN").unwrap_or_default();
        Self::new(base, token)
    }

    pub fn base(&self) -> &Url {
        &self.base
    }

    pub fn endpoint_url(&self, path: &str) -> Url {
        let mut url = self.base.clone();
        url.set_path(&format!("/api/{path}"));
        url
    }

    async fn fetch_names(&self, path: &str) -> Result<Vec<String>, FetchFailure> {
        let resp = self
            .http
            .get(self.endpoint_url(path))
            .bearer_auth(&self.token)
            .send()
            .await
            .map_err(|e| FetchFailure::Other(e.to_string()))?;
        let status = resp.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(FetchFailure::Auth);
        }
        if !status.is_success() {
            return Err(FetchFailure::Other(format!("HTTP {}", status.as_u16())));
        }
        let entities: Vec<NamedEntity> = resp
            .json()
            .await
            .map_err(|e| FetchFailure::Other(e.to_string()))?;
        Ok(entities.into_iter().map(|e| e.name).collect())
    }

    /// Issues every path's GET at once and waits for all of them.
    pub async fn fetch_paths_concurrently(
        &self,
        paths: &[&str],
    ) -> Vec<Result<Vec<String>, FetchFailure>> {
        futures::future::join_all(paths.iter().map(|p| self.fetch_names(p))).await
    }

    /// Fetches all four entity sets concurrently.
    pub async fn fetch_entity_catalog(&self) -> Result<EntityCatalog, CatalogError> {
        let paths: Vec<&str> = EntityKind::ALL.iter().map(|k| k.path()).collect();
        let results = self.fetch_paths_concurrently(&paths).await;

        let mut catalog = EntityCatalog::empty(self.base.as_str());
        let mut failed = Vec::new();
        for (kind, result) in EntityKind::ALL.into_iter().zip(results) {
            match result {
                Ok(names) => catalog.set_names(kind, names),
                Err(FetchFailure::Auth) => {
                    return Err(CatalogError::Authentication { endpoint: kind })
                }
                Err(FetchFailure::Other(message)) => failed.push(EndpointFailure {
                    endpoint: kind,
                    message,
                }),
            }
        }
        catalog.fetched_at = Utc::now();
        if failed.is_empty() {
            Ok(catalog)
        } else {
            Err(CatalogError::Partial {
                failed,
                catalog: Box::new(catalog),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FetchFailure {
    Auth,
    Other(String),
}

#[async_trait]
impl CatalogSource for MonitoringClient {
    async fn fetch(&self) -> Result<EntityCatalog, CatalogError> {
        self.fetch_entity_catalog().await
    }
}

/// What a refresh did to the installed snapshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RefreshOutcome {
    Installed { fetched_at: DateTime<Utc> },
    /// The fetch failed in part; the sets that did arrive were installed
    /// because there was no earlier snapshot to fall back on.
    InstalledPartial { failed: Vec<EntityKind> },
    /// The fetch failed; the previous snapshot is still being served.
    StaleRetained { reason: String },
}

/// Both knowledge tiers behind one handle. Catalog reads hand out an `Arc`
/// to an immutable snapshot, so a refresh can never be observed half-done.
#[derive(Debug)]
pub struct KnowledgeBase {
    vocab: Arc<GlobalVocabulary>,
    catalog: RwLock<Arc<EntityCatalog>>,
    refresh_interval: Duration,
    cache_path: Option<PathBuf>,
}

impl KnowledgeBase {
    pub fn new(vocab: Arc<GlobalVocabulary>, catalog: EntityCatalog) -> Self {
        Self {
            vocab,
            catalog: RwLock::new(Arc::new(catalog)),
            refresh_interval: Duration::from_secs(DEFAULT_REFRESH_SECONDS),
            cache_path: None,
        }
    }

    pub fn with_refresh_interval(mut self, interval: Duration) -> Self {
        self.refresh_interval = interval;
        self
    }

    /// Persists every installed snapshot to `path`; if the file already
    /// holds a catalog it becomes the starting snapshot.
    pub fn with_cache(mut self, path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        if let Ok(cached) = EntityCatalog::load(&path) {
            tracing::info!(path = %path.display(), "loaded cached entity catalog");
            *self.catalog.get_mut() = Arc::new(cached);
        }
        self.cache_path = Some(path);
        self
    }

    pub fn vocab(&self) -> &Arc<GlobalVocabulary> {
        &self.vocab
    }

    pub fn refresh_interval(&self) -> Duration {
        self.refresh_interval
    }

    pub fn snapshot(&self) -> Arc<EntityCatalog> {
        Arc::clone(&self.catalog.read())
    }

    /// Swaps in a new snapshot. `fetched_at` is bumped if needed so it
    /// strictly increases for the same source.
    pub fn install(&self, mut catalog: EntityCatalog) -> DateTime<Utc> {
        let mut guard = self.catalog.write();
        if guard.source_instance == catalog.source_instance && catalog.fetched_at <= guard.fetched_at
        {
            catalog.fetched_at = guard.fetched_at + chrono::Duration::microseconds(1);
        }
        let fetched_at = catalog.fetched_at;
        let catalog = Arc::new(catalog);
        *guard = Arc::clone(&catalog);
        drop(guard);
        if let Some(path) = &self.cache_path {
            if let Err(e) = catalog.save(path) {
                tracing::warn!(error = %e, "could not persist catalog cache");
            }
        }
        fetched_at
    }

    pub async fn refresh(&self, source: &dyn CatalogSource) -> RefreshOutcome {
        match source.fetch().await {
            Ok(catalog) => RefreshOutcome::Installed {
                fetched_at: self.install(catalog),
            },
            Err(CatalogError::Partial { failed, catalog }) if self.snapshot().is_empty() => {
                tracing::warn!(?failed, "installing partial catalog, no prior snapshot");
                self.install(*catalog);
                RefreshOutcome::InstalledPartial {
                    failed: failed.into_iter().map(|f| f.endpoint).collect(),
                }
            }
            Err(e) => {
                tracing::warn!(error = %e, "catalog refresh failed; serving previous snapshot");
                RefreshOutcome::StaleRetained {
                    reason: e.to_string(),
                }
            }
        }
    }

    /// Refreshes every `refresh_interval` until the task is aborted.
    pub fn spawn_refresher(
        self: &Arc<Self>,
        source: Arc<dyn CatalogSource>,
    ) -> tokio::task::JoinHandle<()> {
        let kb = Arc::clone(self);
        tokio::spawn(async move {
            let mut ticker = tokio::time::interval(kb.refresh_interval);
            ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            ticker.tick().await;
            loop {
                ticker.tick().await;
                kb.refresh(source.as_ref()).await;
            }
        })
    }
}

/// Refresh period from `KB_REFRESH_SECONDS`, defaulting to five minutes.
pub fn refresh_interval_from_env() -> Duration {
    std::env::var("KB_REFRESH_SECONDS")
        .ok()
        .and_then(|s| s.parse::<u64>().ok())
        .filter(|s| *s > 0)
        .map(Duration::from_secs)
        .unwrap_or(Duration::from_secs(DEFAULT_REFRESH_SECONDS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicBool, Ordering};

    fn catalog(services: &[&str]) -> EntityCatalog {
        let mut c = EntityCatalog::empty("test");
        c.set_names(EntityKind::Services, services.iter().copied());
        c.set_names(EntityKind::Applications, ["robot-shop"]);
        c.fetched_at = Utc::now();
        c
    }

    struct Flaky {
        catalog: parking_lot::Mutex<EntityCatalog>,
        down: AtomicBool,
    }

    #[async_trait]
    impl CatalogSource for Flaky {
        async fn fetch(&self) -> Result<EntityCatalog, CatalogError> {
            if self.down.load(Ordering::SeqCst) {
                return Err(CatalogError::Config("down".into()));
            }
            let mut c = self.catalog.lock().clone();
            c.fetched_at = Utc::now();
            Ok(c)
        }
    }

    fn kb() -> KnowledgeBase {
        KnowledgeBase::new(Arc::new(GlobalVocabulary::embedded()), EntityCatalog::empty("test"))
    }

    #[tokio::test]
    async fn refresh_picks_up_new_entities() {
        let kb = kb();
        let src = Flaky {
            catalog: parking_lot::Mutex::new(catalog(&["catalogue"])),
            down: AtomicBool::new(false),
        };
        kb.refresh(&src).await;
        assert!(!kb.snapshot().services.contains("otel-shop-cart"));
        src.catalog.lock().services.insert("otel-shop-cart".into());
        kb.refresh(&src).await;
        assert!(kb.snapshot().services.contains("otel-shop-cart"));
    }

    #[tokio::test]
    async fn failed_refresh_keeps_previous_snapshot() {
        let kb = kb();
        let src = Flaky {
            catalog: parking_lot::Mutex::new(catalog(&["catalogue", "payment"])),
            down: AtomicBool::new(false),
        };
        kb.refresh(&src).await;
        let before = kb.snapshot();
        src.down.store(true, Ordering::SeqCst);
        let outcome = kb.refresh(&src).await;
        assert!(matches!(outcome, RefreshOutcome::StaleRetained { .. }));
        assert_eq!(*kb.snapshot(), *before);
    }

    #[tokio::test]
    async fn fetched_at_strictly_increases() {
        let kb = kb();
        let fixed = catalog(&["catalogue"]);
        let a = kb.install(fixed.clone());
        let b = kb.install(fixed.clone());
        let c = kb.install(fixed);
        assert!(a < b && b < c);
    }

    #[test]
    fn blank_names_dropped_and_deduplicated() {
        let mut c = EntityCatalog::empty("x");
        c.set_names(EntityKind::Services, ["a", "", "a", "  ", "b"]);
        assert_eq!(c.services.len(), 2);
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catalog.json");
        let kb = kb().with_cache(&path);
        kb.install(catalog(&["catalogue"]));
        let reloaded = super::KnowledgeBase::new(
            Arc::new(GlobalVocabulary::embedded()),
            EntityCatalog::empty("other"),
        )
        .with_cache(&path);
        assert!(reloaded.snapshot().services.contains("catalogue"));
    }

    #[test]
    fn snapshot_isolation_under_concurrent_refresh() {
        let kb = Arc::new(kb());
        let writer = {
            let kb = Arc::clone(&kb);
            std::thread::spawn(move || {
                for i in 0..500 {
                    let mut c = EntityCatalog::empty("test");
                    let tag = format!("cycle-{i}");
                    for kind in EntityKind::ALL {
                        c.set_names(kind, [tag.clone()]);
                    }
                    kb.install(c);
                }
            })
        };
        let readers: Vec<_> = (0..4)
            .map(|_| {
                let kb = Arc::clone(&kb);
                std::thread::spawn(move || {
                    for _ in 0..2000 {
                        let snap = kb.snapshot();
                        let sets: Vec<_> = EntityKind::ALL.iter().map(|k| snap.names(*k)).collect();
                        assert!(sets.windows(2).all(|w| w[0] == w[1]), "mixed snapshot");
                    }
                })
            })
            .collect();
        writer.join().unwrap();
        for r in readers {
            r.join().unwrap();
        }
    }
}
