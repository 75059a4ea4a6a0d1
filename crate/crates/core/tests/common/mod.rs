#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use veriscore::backend::MockChatBackend;
use veriscore::corpus::{ingest_prompts, ingest_responses, Clock, Prompt, PromptKind, Response};
use veriscore::extractor::assemble_extraction_prompt;
use veriscore::pipeline::{Backends, PipelineConfig};
use veriscore::retriever::{render_results, MockSearchClient, SearchResult};
use veriscore::segmenter::{build_windows, render_window};
use veriscore::verifier::{assemble_verification_prompt, FieldOrder, LabelMode};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn load_corpus(dir: &Path) -> (Vec<Prompt>, Vec<Response>) {
    let prompts = ingest_prompts(&dir.join("prompts.jsonl"), PromptKind::NonQa).unwrap();
    let responses = ingest_responses(&dir.join("responses.jsonl"), &prompts).unwrap();
    (prompts, responses)
}

pub fn three_results() -> Vec<SearchResult> {
    vec![
        SearchResult {
            rank: 1,
            title: "Ada Lovelace - Wikipedia".into(),
            snippet: "Augusta Ada King, Countess of Lovelace (née Byron; 10 December 1815 - 27 November 1852) was an English mathematician and writer.".into(),
            link: "https://en.wikipedia.org/wiki/Ada_Lovelace".into(),
        },
        SearchResult {
            rank: 2,
            title: "Ada Lovelace: The first computer programmer".into(),
            snippet: "Born in London on December 10, 1815, Ada was the daughter of the poet Lord Byron.".into(),
            link: "https://example.org/ada".into(),
        },
        SearchResult {
            rank: 3,
            title: "".into(),
            snippet: "Lovelace's notes on the Analytical Engine".into(),
            link: "https://example.org/notes".into(),
        },
    ]
}

pub const GOLDEN_CLAIM: &str = "Ada Lovelace was born in London in 1815";

/// Every golden artifact as (file name, rendered contents).
pub fn golden_artifacts() -> Vec<(String, String)> {
    let (prompts, responses) = load_corpus(&fixtures().join("windows"));
    let mut windows = String::new();
    let mut extraction = String::new();
    let mut count = 0;
    for r in &responses {
        let p = prompts.iter().find(|p| p.id == r.prompt_id).unwrap();
        for w in build_windows(r, p) {
            count += 1;
            let header = format!("### {} sentence {}\n", r.id, w.sentence_index);
            let rendered = render_window(&w);
            windows.push_str(&header);
            windows.push_str(&rendered);
            windows.push('\n');
            extraction.push_str(&header);
            extraction.push_str(&assemble_extraction_prompt(&rendered, &w.focus, p.kind));
            extraction.push('\n');
        }
    }
    assert_eq!(count, 12, "window fixture must yield 12 windows");

    let evidence = render_results(&three_results());
    let mut out = vec![
        ("windows.txt".to_string(), windows),
        ("extraction_prompts.txt".to_string(), extraction),
        ("evidence_3.txt".to_string(), evidence.clone()),
    ];
    for (mode, mode_name) in [(LabelMode::Binary, "binary"), (LabelMode::Ternary, "ternary")] {
        for (order, order_name) in [(FieldOrder::Standard, "standard"), (FieldOrder::Claude, "claude")] {
            out.push((
                format!("verification_{mode_name}_{order_name}.txt"),
                assemble_verification_prompt(GOLDEN_CLAIM, &evidence, mode, order),
            ));
        }
    }
    out.push((
        "verification_binary_standard_empty.txt".to_string(),
        assemble_verification_prompt(GOLDEN_CLAIM, &render_results(&[]), LabelMode::Binary, FieldOrder::Standard),
    ));
    out
}

/// Compares against `tests/golden/<name>`, rewriting it instead when
/// `UPDATE_GOLDEN` is set.
pub fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = golden_dir().join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(golden_dir()).unwrap();
        fs::write(&path, actual).unwrap();
        return Ok(());
    }
    let expected = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        return Ok(());
    }
    let line = expected
        .lines()
        .zip(actual.lines())
        .position(|(a, b)| a != b)
        .map_or_else(|| "length differs".to_string(), |i| format!("first difference at line {}", i + 1));
    Err(format!("{name} differs from golden file ({line})"))
}

pub struct MockSet {
    pub extractor: Arc<MockChatBackend>,
    pub verifier: Arc<MockChatBackend>,
    pub search: Arc<MockSearchClient>,
}

impl MockSet {
    pub fn load(dir: &Path) -> Self {
        let llm = dir.join("llm_transcript.json");
        MockSet {
            extractor: Arc::new(MockChatBackend::from_file("mock-extractor", &llm).unwrap()),
            verifier: Arc::new(MockChatBackend::from_file("mock-verifier", &llm).unwrap()),
            search: Arc::new(MockSearchClient::from_file(&dir.join("search_transcript.json")).unwrap()),
        }
    }

    pub fn backends(&self) -> Backends {
        Backends {
            extractor: self.extractor.clone(),
            verifier: self.verifier.clone(),
            search: self.search.clone(),
        }
    }

    pub fn total_calls(&self) -> usize {
        self.extractor.call_count() + self.verifier.call_count() + self.search.call_count()
    }
}

pub fn offline_config(run_dir: &Path) -> PipelineConfig {
    let mut c = PipelineConfig::new(run_dir);
    c.clock = Clock::epoch();
    c
}

/// Relative path to contents for every file under `dir`.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
