//! Few-shot claim extraction over sliding windows.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, GenerationParams};
use crate::corpus::{Claim, Prompt, PromptKind, Response};
use crate::exec::run_bounded;
use crate::segmenter::{build_windows, render_window, END_MARKER, START_MARKER};

const NONQA_TEMPLATE: &str = include_str!("../templates/extract_nonqa.txt");
const QA_TEMPLATE: &str = include_str!("../templates/extract_qa.txt");

pub const NO_CLAIM: &str = "No verifiable claim.";

#[derive(Debug, Error)]
#[error("extraction failed for response {response_id}, window {window_index}: {source}")]
pub struct ExtractError {
    pub response_id: String,
    pub window_index: usize,
    #[source]
    pub source: BackendError,
}

pub fn assemble_extraction_prompt(window_render: &str, focus: &str, kind: PromptKind) -> String {
    let (examples, slot) = match kind {
        PromptKind::NonQa => (NONQA_TEMPLATE, "Text: "),
        PromptKind::Qa => (QA_TEMPLATE, ""),
    };
    format!(
        "{}\n\nExtract *verifiable atomic* facts.\n\n{slot}{window_render}\nSentence to be focused on: {focus}\nFacts:",
        examples.trim_end()
    )
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedClaims {
    pub claims: Vec<String>,
    pub is_no_claim: bool,
    /// Non-empty lines that were neither bullets nor the no-claim sentinel.
    pub ignored: Vec<String>,
}

fn is_no_claim_line(line: &str) -> bool {
    let body = line.trim().trim_end_matches('.').trim_end();
    body.eq_ignore_ascii_case(NO_CLAIM.trim_end_matches('.'))
}

/// Parses a bulleted claim list.
///
/// `- ` bullets become claims; a no-claim sentinel line (any case, trailing
/// period optional, bulleted or not) sets `is_no_claim`. When both appear
/// the claims win. Marker strings are stripped from claim text.
pub fn parse_claim_lines(raw: &str) -> ParsedClaims {
    let mut out = ParsedClaims::default();
    let mut saw_sentinel = false;
    for line in raw.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if is_no_claim_line(line) {
            saw_sentinel = true;
            continue;
        }
        if let Some(rest) = line.strip_prefix("- ") {
            if is_no_claim_line(rest) {
                saw_sentinel = true;
                continue;
            }
            let claim = rest.replace(START_MARKER, "").replace(END_MARKER, "");
            let claim = claim.trim();
            if !claim.is_empty() {
                out.claims.push(claim.to_string());
            }
            continue;
        }
        out.ignored.push(line.to_string());
    }
    out.is_no_claim = saw_sentinel && out.claims.is_empty();
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub window_index: usize,
    pub raw_output: String,
    pub claims: Vec<String>,
    pub is_no_claim: bool,
    /// Set when the output held neither claims nor the no-claim sentinel.
    pub parse_error: Option<String>,
}

impl ExtractionResult {
    fn from_raw(window_index: usize, raw_output: String) -> Self {
        let parsed = parse_claim_lines(&raw_output);
        for line in &parsed.ignored {
            log::debug!("window {window_index}: ignoring non-claim line {line:?}");
        }
        let parse_error = if parsed.claims.is_empty() && !parsed.is_no_claim {
            log::warn!("window {window_index}: unparseable extractor output");
            Some("no claim bullets and no sentinel".to_string())
        } else {
            None
        };
        ExtractionResult {
            window_index,
            raw_output,
            claims: parsed.claims,
            is_no_claim: parsed.is_no_claim,
            parse_error,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Extraction {
    pub claims: Vec<Claim>,
    pub results: Vec<ExtractionResult>,
}

/// Drops exact duplicate claim strings, keeping the first occurrence.
pub fn dedup_claims(claims: Vec<(usize, String)>) -> Vec<(usize, String)> {
    let mut seen = HashSet::new();
    claims.into_iter().filter(|(_, text)| seen.insert(text.clone())).collect()
}

pub fn claim_id(response_id: &str, n: usize) -> String {
    format!("{response_id}#c{n}")
}

/// Extracts claims from one response.
pub fn extract_claims(
    response: &Response,
    prompt: &Prompt,
    backend: &dyn ChatBackend,
    params: GenerationParams,
    width: usize,
) -> Result<Extraction, ExtractError> {
    let mut all = extract_batch(&[(response, prompt)], backend, params, width)?;
    Ok(all.pop().unwrap_or_default())
}

/// Extracts claims from many responses, dispatching every window through a
/// single bounded executor. Output order matches `jobs`.
pub fn extract_batch(
    jobs: &[(&Response, &Prompt)],
    backend: &dyn ChatBackend,
    params: GenerationParams,
    width: usize,
) -> Result<Vec<Extraction>, ExtractError> {
    struct Call {
        job: usize,
        window_index: usize,
        prompt: String,
    }
    let mut calls = Vec::new();
    for (job, (response, prompt)) in jobs.iter().enumerate() {
        for w in build_windows(response, prompt) {
            let text = assemble_extraction_prompt(&render_window(&w), &w.focus, prompt.kind);
            calls.push(Call {
                job,
                window_index: w.sentence_index,
                prompt: text,
            });
        }
    }

    let outputs = run_bounded(&calls, width, |_, call| backend.complete(&call.prompt, params));

    let mut per_job: HashMap<usize, Vec<ExtractionResult>> = HashMap::new();
    for (call, out) in calls.iter().zip(outputs) {
        let raw = out.map_err(|source| ExtractError {
            response_id: jobs[call.job].0.id.clone(),
            window_index: call.window_index,
            source,
        })?;
        per_job
            .entry(call.job)
            .or_default()
            .push(ExtractionResult::from_raw(call.window_index, raw));
    }

    Ok(jobs
        .iter()
        .enumerate()
        .map(|(job, (response, _))| {
            let results = per_job.remove(&job).unwrap_or_default();
            let flat = results
                .iter()
                .flat_map(|r| r.claims.iter().map(move |c| (r.window_index, c.clone())))
                .collect();
            let claims = dedup_claims(flat)
                .into_iter()
                .enumerate()
                .map(|(n, (sentence_index, text))| Claim {
                    id: claim_id(&response.id, n),
                    response_id: response.id.clone(),
                    sentence_index,
                    text,
                })
                .collect();
            Extraction { claims, results }
        })
        .collect())
}
