//! Claim-as-query web search, a content-addressed result cache, and the
//! evidence block rendered into verification prompts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::backend::{content_hash, BackendError};
use crate::corpus::{write_atomic, Claim, Clock};
use crate::exec::{RateLimiter, RetryPolicy};

/// Upper bound on results kept per claim.
pub const MAX_RESULTS: usize = 10;

pub const NO_RESULTS: &str = "No search results found.";

/// One organic result as returned on the wire.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrganicResult {
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub snippet: String,
    #[serde(default)]
    pub link: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub rank: usize,
    pub title: String,
    pub snippet: String,
    pub link: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceList {
    pub claim_id: String,
    pub results: Vec<SearchResult>,
    pub retrieved_at: DateTime<Utc>,
    pub cache_hit: bool,
}

#[derive(Debug, Error)]
pub enum RetrieveError {
    #[error("search failed for claim {claim_id}: {source}")]
    Search {
        claim_id: String,
        #[source]
        source: BackendError,
    },
    #[error("claim {0} has empty text")]
    EmptyQuery(String),
}

pub trait SearchClient: Send + Sync {
    fn search(&self, query: &str, num: usize) -> Result<Vec<OrganicResult>, BackendError>;

    fn describe(&self) -> String;
}

/// Reads the `organic` array of a Serper-style response body.
pub fn parse_search_response(body: &serde_json::Value) -> Result<Vec<OrganicResult>, BackendError> {
    match body.get("organic") {
        None | Some(serde_json::Value::Null) => Ok(Vec::new()),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| BackendError::Decode(format!("organic: {e}"))),
    }
}

pub fn search_request_body(query: &str, num: usize) -> serde_json::Value {
    json!({ "q": query, "num": num })
}

pub struct HttpSearchClient {
    base_url: String,
    api_key: String,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
    limiter: RateLimiter,
}

impl HttpSearchClient {
    pub fn new(base_url: &str, api_key: &str, retry: RetryPolicy, limiter: RateLimiter) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpSearchClient {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: api_key.to_string(),
            client,
            retry,
            limiter,
        })
    }

    fn send_once(&self, body: &serde_json::Value) -> Result<Vec<OrganicResult>, BackendError> {
        self.limiter.acquire();
        let resp = self
            .client
            .post(format!("{}/search", self.base_url))
            .header("X-API-KEY", &self.api_key)
            .json(body)
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Status {
                code: status.as_u16(),
                body: text,
            });
        }
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| BackendError::Decode(e.to_string()))?;
        parse_search_response(&v)
    }
}

impl SearchClient for HttpSearchClient {
    fn search(&self, query: &str, num: usize) -> Result<Vec<OrganicResult>, BackendError> {
        let body = search_request_body(query, num);
        self.retry.run(|| self.send_once(&body))
    }

    fn describe(&self) -> String {
        self.base_url.clone()
    }
}

/// Replays search responses keyed by the content hash of the query.
#[derive(Debug, Default)]
pub struct MockSearchClient {
    transcript: BTreeMap<String, serde_json::Value>,
    calls: AtomicUsize,
}

impl MockSearchClient {
    pub fn new(transcript: BTreeMap<String, serde_json::Value>) -> Self {
        MockSearchClient {
            transcript,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let err = |message: String| BackendError::Transcript {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        Ok(Self::new(serde_json::from_str(&text).map_err(|e| err(e.to_string()))?))
    }

    pub fn from_results<'a>(entries: impl IntoIterator<Item = (&'a str, Vec<OrganicResult>)>) -> Self {
        Self::new(
            entries
                .into_iter()
                .map(|(q, rs)| (content_hash(q), json!({ "organic": rs })))
                .collect(),
        )
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl SearchClient for MockSearchClient {
    fn search(&self, query: &str, _num: usize) -> Result<Vec<OrganicResult>, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let key = content_hash(query);
        let body = self.transcript.get(&key).ok_or(BackendError::MissingTranscript(key))?;
        parse_search_response(body)
    }

    fn describe(&self) -> String {
        "mock-search".into()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CacheEntry {
    query: String,
    retrieved_at: DateTime<Utc>,
    organic: Vec<OrganicResult>,
}

/// On-disk cache at `<dir>/<first2>/<hash>.json`. Writes go through a
/// temp file and rename, so concurrent writers of one key leave one
/// complete entry.
#[derive(Debug, Clone)]
pub struct SearchCache {
    dir: PathBuf,
    max_age: Option<chrono::Duration>,
}

impl SearchCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        SearchCache {
            dir: dir.into(),
            max_age: None,
        }
    }

    pub fn with_max_age(mut self, max_age: chrono::Duration) -> Self {
        self.max_age = Some(max_age);
        self
    }

    pub fn entry_path(&self, query: &str) -> PathBuf {
        let hash = content_hash(query);
        self.dir.join(&hash[..2]).join(format!("{hash}.json"))
    }

    fn get(&self, query: &str, now: DateTime<Utc>) -> Option<CacheEntry> {
        let text = fs::read_to_string(self.entry_path(query)).ok()?;
        let entry: CacheEntry = serde_json::from_str(&text).ok()?;
        if entry.query != query {
            return None;
        }
        if let Some(max_age) = self.max_age {
            if now - entry.retrieved_at > max_age {
                return None;
            }
        }
        Some(entry)
    }

    fn put(&self, entry: &CacheEntry) {
        let path = self.entry_path(&entry.query);
        let body = serde_json::to_vec_pretty(entry).expect("cache entry serializes");
        if let Err(e) = write_atomic(&path, &body) {
            log::warn!("cannot write search cache entry {}: {e}", path.display());
        }
    }

    pub fn contains(&self, query: &str, now: DateTime<Utc>) -> bool {
        self.get(query, now).is_some()
    }
}

fn rank_results(organic: &[OrganicResult], num: usize) -> Vec<SearchResult> {
    organic
        .iter()
        .filter(|r| !r.link.trim().is_empty())
        .take(num.min(MAX_RESULTS))
        .enumerate()
        .map(|(i, r)| SearchResult {
            rank: i + 1,
            title: r.title.clone(),
            snippet: r.snippet.clone(),
            link: r.link.clone(),
        })
        .collect()
}

/// Searches with the claim text verbatim, consulting `cache` first.
pub fn retrieve(
    claim: &Claim,
    client: &dyn SearchClient,
    cache: Option<&SearchCache>,
    num: usize,
    clock: Clock,
) -> Result<EvidenceList, RetrieveError> {
    let query = claim.text.as_str();
    if query.trim().is_empty() {
        return Err(RetrieveError::EmptyQuery(claim.id.clone()));
    }
    let now = clock.now();
    if let Some(entry) = cache.and_then(|c| c.get(query, now)) {
        return Ok(EvidenceList {
            claim_id: claim.id.clone(),
            results: rank_results(&entry.organic, num),
            retrieved_at: entry.retrieved_at,
            cache_hit: true,
        });
    }
    let organic = client
        .search(query, num.min(MAX_RESULTS))
        .map_err(|source| RetrieveError::Search {
            claim_id: claim.id.clone(),
            source,
        })?;
    let entry = CacheEntry {
        query: query.to_string(),
        retrieved_at: now,
        organic,
    };
    if let Some(c) = cache {
        c.put(&entry);
    }
    Ok(EvidenceList {
        claim_id: claim.id.clone(),
        results: rank_results(&entry.organic, num),
        retrieved_at: now,
        cache_hit: false,
    })
}

fn one_line(field: &str) -> String {
    field.split(['\n', '\r']).filter(|s| !s.is_empty()).collect::<Vec<_>>().join(" ")
}

pub fn render_evidence(evidence: &EvidenceList) -> String {
    render_results(&evidence.results)
}

pub fn render_results(results: &[SearchResult]) -> String {
    if results.is_empty() {
        return NO_RESULTS.to_string();
    }
    results
        .iter()
        .map(|r| {
            format!(
                "Search result {}\nTitle: {}\nContent: {}\nLink: {}\n",
                r.rank,
                one_line(&r.title),
                one_line(&r.snippet),
                one_line(&r.link)
            )
        })
        .collect()
}
