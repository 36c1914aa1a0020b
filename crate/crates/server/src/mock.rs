//! A stand-in for the monitoring platform: serves entity lists from fixture
//! files and deterministic synthetic metric data.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use dashtalk_core::catalog::{CatalogError, EntityCatalog, EntityKind, NamedEntity};
use parking_lot::RwLock;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

pub const DEFAULT_SEED: u64 = 42;
/// Spacing of synthetic time-series points.
pub const STEP_SECONDS: i64 = 60;
const MAX_POINTS: i64 = 1440;

#[derive(Debug, Clone)]
pub struct MockConfig {
    pub fixtures_dir: PathBuf,
    /// Required bearer token; `None` accepts any caller.
    pub token: Option<String>,
    pub seed: u64,
    /// Delay applied to every request.
    pub latency: Duration,
}

impl MockConfig {
    pub fn new(fixtures_dir: impl Into<PathBuf>) -> Self {
        Self {
            fixtures_dir: fixtures_dir.into(),
            token: None,
            seed: DEFAULT_SEED,
            latency: Duration::ZERO,
        }
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Runtime knobs for tests: extra latency per path, failing endpoints, a
/// full outage, and the served catalog itself.
pub struct MockControl {
    catalog: RwLock<EntityCatalog>,
    latency: RwLock<Duration>,
    path_latency: RwLock<HashMap<String, Duration>>,
    failing: RwLock<HashSet<String>>,
    down: RwLock<bool>,
    token: Option<String>,
    seed: u64,
}

impl MockControl {
    pub fn catalog(&self) -> EntityCatalog {
        self.catalog.read().clone()
    }

    pub fn set_names(&self, kind: EntityKind, names: &[&str]) {
        self.catalog.write().set_names(kind, names.iter().copied());
    }

    pub fn add_name(&self, kind: EntityKind, name: &str) {
        self.catalog.write().names_mut(kind).insert(name.to_string());
    }

    pub fn set_latency(&self, latency: Duration) {
        *self.latency.write() = latency;
    }

    /// Overrides the delay for one path (`services`, `metric-data`, ...).
    pub fn set_path_latency(&self, path: &str, latency: Duration) {
        self.path_latency.write().insert(path.to_string(), latency);
    }

    /// Makes one path answer 500.
    pub fn fail_endpoint(&self, path: &str, failing: bool) {
        let mut set = self.failing.write();
        if failing {
            set.insert(path.to_string());
        } else {
            set.remove(path);
        }
    }

    /// Makes every path answer 503.
    pub fn set_down(&self, down: bool) {
        *self.down.write() = down;
    }

    async fn gate(&self, path: &str, headers: &HeaderMap) -> Result<(), Response> {
        let delay = self
            .path_latency
            .read()
            .get(path)
            .copied()
            .unwrap_or(*self.latency.read());
        if !delay.is_zero() {
            tokio::time::sleep(delay).await;
        }
        if *self.down.read() {
            return Err(error(StatusCode::SERVICE_UNAVAILABLE, "monitoring backend is down"));
        }
        if let Some(expected) = &self.token {
            let given = headers
                .get(axum::http::header::AUTHORIZATION)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.strip_prefix("Bearer "));
            if given != Some(expected.as_str()) {
                return Err(error(StatusCode::UNAUTHORIZED, "missing or invalid bearer token"));
            }
        }
        if self.failing.read().contains(path) {
            return Err(error(StatusCode::INTERNAL_SERVER_ERROR, "injected failure"));
        }
        Ok(())
    }
}

fn error(status: StatusCode, message: &str) -> Response {
    (status, Json(json!({ "error": message }))).into_response()
}

/// Loads fixtures and builds the router plus its control handle. Any
/// missing or malformed fixture file is a startup error.
pub fn build(config: &MockConfig) -> Result<(Router, Arc<MockControl>), CatalogError> {
    let catalog = EntityCatalog::from_fixture_dir(&config.fixtures_dir)?;
    let control = Arc::new(MockControl {
        catalog: RwLock::new(catalog),
        latency: RwLock::new(config.latency),
        path_latency: RwLock::new(HashMap::new()),
        failing: RwLock::new(HashSet::new()),
        down: RwLock::new(false),
        token: config.token.clone(),
        seed: config.seed,
    });
    let mut router = Router::new();
    for kind in EntityKind::ALL {
        router = router.route(
            &format!("/api/{}", kind.path()),
            get(move |State(c): State<Arc<MockControl>>, headers: HeaderMap| async move {
                entities(c, kind, headers).await
            }),
        );
    }
    let router = router
        .route("/api/metric-data", get(metric_data))
        .with_state(Arc::clone(&control));
    Ok((router, control))
}

async fn entities(control: Arc<MockControl>, kind: EntityKind, headers: HeaderMap) -> Response {
    if let Err(r) = control.gate(kind.path(), &headers).await {
        return r;
    }
    let names: Vec<NamedEntity> = control
        .catalog
        .read()
        .names(kind)
        .iter()
        .map(|n| NamedEntity { name: n.clone() })
        .collect();
    Json(names).into_response()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricDataQuery {
    pub metric: String,
    pub aggregation: String,
    /// Window length in seconds.
    pub window: i64,
    /// Window end, Unix seconds. Defaults to the epoch so requests without
    /// it stay reproducible.
    #[serde(default)]
    pub end: i64,
    #[serde(default)]
    pub filter: Option<String>,
    #[serde(default, rename = "groupBy")]
    pub group_by: Option<String>,
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default)]
    pub order: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupValue {
    pub key: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricData {
    /// `(timestamp_ms, value)` points, oldest first.
    Series { series: Vec<(i64, f64)> },
    Groups { groups: Vec<GroupValue> },
}

async fn metric_data(
    State(control): State<Arc<MockControl>>,
    headers: HeaderMap,
    Query(q): Query<MetricDataQuery>,
) -> Response {
    if let Err(r) = control.gate("metric-data", &headers).await {
        return r;
    }
    if q.window <= 0 {
        return error(StatusCode::UNPROCESSABLE_ENTITY, "window must be positive");
    }
    let catalog = control.catalog.read().clone();
    Json(synthesize(&q, control.seed, &catalog)).into_response()
}

/// Deterministic data for a request: the same query and seed always give
/// the same values.
pub fn synthesize(q: &MetricDataQuery, seed: u64, catalog: &EntityCatalog) -> MetricData {
    let mut rng = rng_for(q, seed);
    let (base, spread) = match q.metric.as_str() {
        "latency" => (120.0, 80.0),
        "errors" => (0.02, 0.02),
        "erroneousCalls" => (4.0, 4.0),
        _ => (600.0, 300.0),
    };
    let scale = if q.aggregation == "PER_SECOND" { 1.0 / 60.0 } else { 1.0 };
    let value = |rng: &mut ChaCha8Rng| {
        let v: f64 = base + spread * (rng.gen::<f64>() * 2.0 - 1.0);
        (v.max(0.0) * scale * 1000.0).round() / 1000.0
    };

    match &q.group_by {
        Some(tag) => {
            let mut groups: Vec<GroupValue> = group_keys(tag, catalog)
                .into_iter()
                .map(|key| GroupValue {
                    value: value(&mut rng),
                    key,
                })
                .collect();
            let ascending = q.order.as_deref() == Some("ASC");
            groups.sort_by(|a, b| {
                let ord = a.value.total_cmp(&b.value).then_with(|| a.key.cmp(&b.key));
                if ascending {
                    ord
                } else {
                    ord.reverse()
                }
            });
            groups.truncate(q.limit.unwrap_or(10));
            MetricData::Groups { groups }
        }
        None => {
            let points = (q.window / STEP_SECONDS).clamp(1, MAX_POINTS);
            let series = (0..points)
                .map(|i| {
                    let ts = (q.end - (points - 1 - i) * STEP_SECONDS) * 1000;
                    (ts, value(&mut rng))
                })
                .collect();
            MetricData::Series { series }
        }
    }
}

fn rng_for(q: &MetricDataQuery, seed: u64) -> ChaCha8Rng {
    let canonical = serde_json::to_string(q).expect("query serializes");
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(canonical.as_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

fn group_keys(tag: &str, catalog: &EntityCatalog) -> Vec<String> {
    let from = |kind| catalog.names(kind).iter().cloned().collect::<Vec<_>>();
    match tag {
        "service.name" => from(EntityKind::Services),
        "endpoint.name" => from(EntityKind::Endpoints),
        "call.http.status" => ["200", "201", "301", "400", "404", "500", "503"]
            .map(String::from)
            .to_vec(),
        "call.error.message" => [
            "connection refused",
            "timeout",
            "null pointer",
            "upstream unavailable",
            "bad request",
        ]
        .map(String::from)
        .to_vec(),
        _ => from(EntityKind::Endpoints)
            .into_iter()
            .map(|e| format!("/{}", e.trim_start_matches('/').replace(' ', "-")))
            .collect(),
    }
}

/// A mock server bound to a local port.
pub struct MockServer {
    pub addr: SocketAddr,
    pub control: Arc<MockControl>,
    handle: tokio::task::JoinHandle<()>,
}

impl MockServer {
    pub async fn start(config: &MockConfig) -> anyhow::Result<Self> {
        Self::bind(config, "127.0.0.1:0".parse()?).await
    }

    pub async fn bind(config: &MockConfig, addr: SocketAddr) -> anyhow::Result<Self> {
        let (router, control) = build(config)?;
        let listener = tokio::net::TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let handle = tokio::spawn(async move {
            if let Err(e) = axum::serve(listener, router).await {
                tracing::error!(error = %e, "mock monitoring server stopped");
            }
        });
        Ok(Self {
            addr,
            control,
            handle,
        })
    }

    pub fn base_url(&self) -> url::Url {
        url::Url::parse(&format!("http://{}", self.addr)).expect("socket address forms a URL")
    }

    pub async fn wait(mut self) {
        let _ = (&mut self.handle).await;
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.handle.abort();
    }
}

/// The fixture directory shipped with the repository.
pub fn default_fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/monitoring")
}

/// Counts of entities per fixture file, for logging.
pub fn fixture_summary(catalog: &EntityCatalog) -> BTreeMap<String, usize> {
    EntityKind::ALL
        .iter()
        .map(|k| (k.path().to_string(), catalog.names(*k).len()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn query() -> MetricDataQuery {
        MetricDataQuery {
            metric: "calls".into(),
            aggregation: "SUM".into(),
            window: 3600,
            end: 1_700_000_000,
            ..Default::default()
        }
    }

    #[test]
    fn series_is_seeded() {
        let catalog = EntityCatalog::empty("t");
        let a = synthesize(&query(), 42, &catalog);
        assert_eq!(a, synthesize(&query(), 42, &catalog));
        assert_ne!(a, synthesize(&query(), 7, &catalog));
        let MetricData::Series { series } = a else {
            panic!("expected a series")
        };
        assert_eq!(series.len(), 60);
        assert_eq!(series.last().unwrap().0, 1_700_000_000_000);
    }

    #[test]
    fn groups_are_limited_and_ordered() {
        let mut catalog = EntityCatalog::empty("t");
        catalog.set_names(EntityKind::Services, ["a", "b", "c", "d", "e", "f"]);
        let q = MetricDataQuery {
            group_by: Some("service.name".into()),
            limit: Some(3),
            order: Some("DESC".into()),
            ..query()
        };
        let MetricData::Groups { groups } = synthesize(&q, 42, &catalog) else {
            panic!("expected groups")
        };
        assert_eq!(groups.len(), 3);
        assert!(groups.windows(2).all(|w| w[0].value >= w[1].value));
    }
}
