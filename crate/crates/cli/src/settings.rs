//! Settings layering: command-line flags, then environment, then the
//! optional TOML config file, then built-in defaults.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use veriscore::scorer::{parse_rational, Rational};
use veriscore::verifier::{FieldOrder, LabelMode};

pub const DEFAULT_LLM_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_SEARCH_BASE_URL: &str = "https://google.serper.dev";
pub const DEFAULT_MODEL: &str = "gpt-4-0125-preview";
pub const DEFAULT_MAX_TOKENS: u32 = 1024;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointFile {
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub max_tokens: Option<u32>,
    pub requests_per_second: Option<f64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub concurrency: Option<usize>,
    pub num_results: Option<usize>,
    pub label_mode: Option<LabelMode>,
    pub field_order: Option<FieldOrder>,
    /// Cache entries older than this are refetched.
    pub cache_max_age_hours: Option<i64>,
    #[serde(default)]
    pub k: BTreeMap<String, String>,
    #[serde(default)]
    pub extractor: EndpointFile,
    #[serde(default)]
    pub verifier: EndpointFile,
    #[serde(default)]
    pub search: EndpointFile,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Parses a `domain=value` K override.
pub fn parse_k_override(s: &str) -> Result<(String, Rational)> {
    let Some((domain, value)) = s.split_once('=') else {
        bail!("expected DOMAIN=VALUE, got {s:?}");
    };
    let domain = domain.trim();
    if domain.is_empty() {
        bail!("empty domain in K override {s:?}");
    }
    let k = parse_rational(value.trim()).map_err(|e| anyhow::anyhow!("K override {s:?}: {e}"))?;
    if k <= Rational::from_integer(0) {
        bail!("K override {s:?} must be positive");
    }
    Ok((domain.to_string(), k))
}

/// Config-file overrides first, flag overrides replacing them per domain.
pub fn merge_k(file: &BTreeMap<String, String>, flags: &[String]) -> Result<BTreeMap<String, Rational>> {
    let mut out = BTreeMap::new();
    for (domain, value) in file {
        let (d, k) = parse_k_override(&format!("{domain}={value}"))?;
        out.insert(d, k);
    }
    for f in flags {
        let (d, k) = parse_k_override(f)?;
        out.insert(d, k);
    }
    Ok(out)
}

/// First present value wins.
pub fn layered<T>(flag_or_env: Option<T>, file: Option<T>, default: T) -> T {
    flag_or_env.or(file).unwrap_or(default)
}

/// Reads a credential from the environment, treating empty as unset.
pub fn env_key(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.trim().is_empty())
}
