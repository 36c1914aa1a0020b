//! String similarity providers used for fuzzy entity matching.

use std::collections::HashMap;

use async_trait::async_trait;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    CharacterNgram,
    EmbeddingBacked,
}

/// Cosine similarity in `[0, 1]`, symmetric, 1.0 on identical input.
#[async_trait]
pub trait SimilarityProvider: Send + Sync {
    fn kind(&self) -> ProviderKind;

    fn similarity(&self, a: &str, b: &str) -> f64;

    /// Warms any caches needed to score these strings. Providers that
    /// compute locally do nothing.
    async fn prepare(&self, _texts: &[String]) {}
}

/// Lowercases and collapses whitespace runs to one space.
pub fn normalize(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Character-trigram term frequencies of the normalized string. Strings
/// shorter than three characters count as a single gram.
pub fn trigram_counts(s: &str) -> HashMap<String, u32> {
    let chars: Vec<char> = normalize(s).chars().collect();
    let mut counts = HashMap::new();
    if chars.is_empty() {
        return counts;
    }
    if chars.len() < 3 {
        counts.insert(chars.iter().collect(), 1);
        return counts;
    }
    for w in chars.windows(3) {
        *counts.entry(w.iter().collect::<String>()).or_insert(0) += 1;
    }
    counts
}

/// Cosine over character-trigram term-frequency vectors.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrigramCosine;

impl TrigramCosine {
    pub fn score(a: &str, b: &str) -> f64 {
        if normalize(a) == normalize(b) {
            return if a.trim().is_empty() { 0.0 } else { 1.0 };
        }
        let (ta, tb) = (trigram_counts(a), trigram_counts(b));
        if ta.is_empty() || tb.is_empty() {
            return 0.0;
        }
        let dot: u64 = ta
            .iter()
            .filter_map(|(g, x)| tb.get(g).map(|y| u64::from(*x) * u64::from(*y)))
            .sum();
        let norm2 = |t: &HashMap<String, u32>| t.values().map(|v| u64::from(*v).pow(2)).sum::<u64>();
        // One square root of the exact integer product keeps scores that sit
        // exactly on a rational threshold from rounding below it.
        let denom = ((norm2(&ta) * norm2(&tb)) as f64).sqrt();
        (dot as f64 / denom).clamp(0.0, 1.0)
    }
}

#[async_trait]
impl SimilarityProvider for TrigramCosine {
    fn kind(&self) -> ProviderKind {
        ProviderKind::CharacterNgram
    }

    fn similarity(&self, a: &str, b: &str) -> f64 {
        Self::score(a, b)
    }
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Cosine over vectors from an external embedding endpoint
/// (`POST {base}/embed`). Vectors are cached; any pair without cached
/// vectors is scored by the trigram provider instead.
#[derive(Debug)]
pub struct EmbeddingSimilarity {
    base_url: String,
    client: reqwest::Client,
    cache: RwLock<HashMap<String, Vec<f64>>>,
}

impl EmbeddingSimilarity {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            client: reqwest::Client::builder()
                .timeout(std::time::Duration::from_secs(30))
                .build()
                .expect("reqwest client builds"),
            cache: RwLock::new(HashMap::new()),
        }
    }

    /// Built from `EMBED_API_URL`, if set.
    pub fn from_env() -> Option<Self> {
        std::env::var("EMBED_API_URL").ok().map(Self::new)
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, String> {
        let resp = self
            .client
            .post(format!("{}/embed", self.base_url))
            .json(&EmbedRequest { texts })
            .send()
            .await
            .map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("HTTP {}", resp.status().as_u16()));
        }
        let body: EmbedResponse = resp.json().await.map_err(|e| e.to_string())?;
        if body.vectors.len() != texts.len() {
            return Err(format!(
                "expected {} vectors, got {}",
                texts.len(),
                body.vectors.len()
            ));
        }
        Ok(body.vectors)
    }

    pub fn cached(&self, text: &str) -> bool {
        self.cache.read().contains_key(text)
    }
}

fn vector_cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb)).clamp(0.0, 1.0))
}

#[async_trait]
impl SimilarityProvider for EmbeddingSimilarity {
    fn kind(&self) -> ProviderKind {
        ProviderKind::EmbeddingBacked
    }

    fn similarity(&self, a: &str, b: &str) -> f64 {
        if a == b {
            return 1.0;
        }
        let cache = self.cache.read();
        match (cache.get(a), cache.get(b)) {
            (Some(va), Some(vb)) => vector_cosine(va, vb).unwrap_or_else(|| TrigramCosine::score(a, b)),
            _ => TrigramCosine::score(a, b),
        }
    }

    async fn prepare(&self, texts: &[String]) {
        let missing: Vec<String> = {
            let cache = self.cache.read();
            let mut m: Vec<String> = texts
                .iter()
                .filter(|t| !cache.contains_key(*t))
                .cloned()
                .collect();
            m.sort();
            m.dedup();
            m
        };
        if missing.is_empty() {
            return;
        }
        match self.embed(&missing).await {
            Ok(vectors) => {
                let mut cache = self.cache.write();
                cache.extend(missing.into_iter().zip(vectors));
            }
            Err(e) => {
                tracing::warn!(error = %e, "embedding endpoint failed; using trigram similarity");
            }
        }
    }
}
