//! Regenerates the scripted transcripts under `tests/fixtures/`.
//!
//! Runs the real pipeline against rule-based backends that record every
//! request they answer, then writes the recordings as hash-keyed
//! transcripts for the mock backends. Run with
//! `cargo run -p veriscore --example make_fixtures`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};
use veriscore::backend::{content_hash, BackendError, ChatBackend, GenerationParams};
use veriscore::corpus::{Clock, PromptKind};
use veriscore::pipeline::{run_pipeline, verify_stage, Backends, PipelineConfig};
use veriscore::retriever::{OrganicResult, SearchClient, NO_RESULTS};
use veriscore::scorer::Rational;
use veriscore::verifier::LabelMode;

type Rule = Box<dyn Fn(&str) -> String + Send + Sync>;

struct RecordingChat {
    name: String,
    rule: Rule,
    log: Arc<Mutex<BTreeMap<String, String>>>,
}

impl ChatBackend for RecordingChat {
    fn complete(&self, prompt: &str, _params: GenerationParams) -> Result<String, BackendError> {
        let out = (self.rule)(prompt);
        self.log.lock().unwrap().insert(content_hash(prompt), out.clone());
        Ok(out)
    }

    fn id(&self) -> &str {
        &self.name
    }
}

#[derive(Default)]
struct RecordingSearch {
    log: Mutex<BTreeMap<String, Value>>,
}

impl SearchClient for RecordingSearch {
    fn search(&self, query: &str, _num: usize) -> Result<Vec<OrganicResult>, BackendError> {
        let body = search_rule(query);
        self.log.lock().unwrap().insert(content_hash(query), body.clone());
        veriscore::retriever::parse_search_response(&body)
    }

    fn describe(&self) -> String {
        "mock-search".into()
    }
}

fn after_last<'a>(text: &'a str, marker: &str) -> &'a str {
    text.rfind(marker).map_or("", |i| &text[i + marker.len()..])
}

/// Sentences with a digit yield one claim per " and "-separated part that
/// holds a digit; others yield the no-claim sentinel.
fn extract_rule(prompt: &str) -> String {
    let focus = after_last(prompt, "Sentence to be focused on: ");
    let focus = focus.split("\nFacts:").next().unwrap_or("").trim();
    if !focus.chars().any(|c| c.is_ascii_digit()) {
        return "No verifiable claim.".into();
    }
    focus
        .trim_end_matches('.')
        .split(" and ")
        .filter(|p| p.chars().any(|c| c.is_ascii_digit()))
        .map(|p| format!("- {p}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn search_rule(query: &str) -> Value {
    if query.contains("BC") || query.contains("12th") {
        return json!({ "organic": [] });
    }
    let hash = content_hash(query);
    let supported = hash.chars().next().is_some_and(|c| c.is_ascii_digit());
    let n = if query.contains("1943") { 12 } else { 3 };
    let head: Vec<&str> = query.split_whitespace().take(3).collect();
    let organic: Vec<Value> = (1..=n)
        .map(|i| {
            let snippet = if i == 1 && supported {
                query.to_string()
            } else {
                format!("Background material on {} ({i}).", head[0])
            };
            let link = if i == 2 && query.contains("Nobel") {
                String::new()
            } else {
                format!("https://example.org/{}/{i}", &hash[..8])
            };
            json!({ "title": format!("{} - result {i}", head.join(" ")), "snippet": snippet, "link": link })
        })
        .collect();
    json!({ "searchParameters": { "q": query }, "organic": organic })
}

fn verify_rule(mode: LabelMode) -> Rule {
    Box::new(move |prompt: &str| {
        let claim = after_last(prompt, "\nClaim: ").lines().next().unwrap_or("");
        if prompt.contains(&format!("Content: {claim}\n")) {
            "The first result states the claim directly. ###Supported.###".into()
        } else if prompt.contains(NO_RESULTS) {
            "The search returned nothing, so I cannot decide.".into()
        } else {
            match mode {
                LabelMode::Binary => "None of the results mention this. ###Unsupported.###".into(),
                LabelMode::Ternary => "None of the results mention this. ###Inconclusive###".into(),
            }
        }
    })
}

struct Recorders {
    llm: Arc<Mutex<BTreeMap<String, String>>>,
    search: Arc<RecordingSearch>,
}

impl Recorders {
    fn new() -> Self {
        Recorders {
            llm: Arc::default(),
            search: Arc::default(),
        }
    }

    fn chat(&self, name: &str, rule: Rule) -> Arc<dyn ChatBackend> {
        Arc::new(RecordingChat {
            name: name.into(),
            rule,
            log: self.llm.clone(),
        })
    }

    fn backends(&self, mode: LabelMode) -> Backends {
        Backends {
            extractor: self.chat("mock-extractor", Box::new(extract_rule)),
            verifier: self.chat("mock-verifier", verify_rule(mode)),
            search: self.search.clone(),
        }
    }

    fn write(&self, dir: &Path) {
        let llm = serde_json::to_string_pretty(&*self.llm.lock().unwrap()).unwrap();
        let search = serde_json::to_string_pretty(&*self.search.log.lock().unwrap()).unwrap();
        fs::write(dir.join("llm_transcript.json"), llm + "\n").unwrap();
        fs::write(dir.join("search_transcript.json"), search + "\n").unwrap();
    }
}

fn config(run_dir: &Path) -> PipelineConfig {
    let mut c = PipelineConfig::new(run_dir);
    c.clock = Clock::epoch();
    c
}

fn e2e(dir: &Path) {
    let rec = Recorders::new();
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path());
    let prompts = dir.join("prompts.jsonl");
    let responses = dir.join("responses.jsonl");
    run_pipeline(&cfg, &rec.backends(LabelMode::Binary), &prompts, &responses, PromptKind::NonQa).unwrap();
    let ternary = PipelineConfig {
        label_mode: LabelMode::Ternary,
        ..cfg.clone()
    };
    verify_stage(&ternary, rec.backends(LabelMode::Ternary).verifier.as_ref()).unwrap();
    rec.write(dir);
}

const SUBJECTS: [&str; 10] = [
    "The old lighthouse keeper",
    "A silver fox",
    "The youngest princess",
    "A wandering minstrel",
    "The clockmaker's apprentice",
    "A tired dragon",
    "The village baker",
    "A curious raven",
    "The exiled knight",
    "A quiet librarian",
];

const ACTIONS: [&str; 10] = [
    "walked along the shore",
    "hid a letter under the floorboards",
    "sang to the empty hall",
    "counted the stars over the valley",
    "followed the lantern into the woods",
    "whispered a secret to the wind",
    "mended a broken music box",
    "waited by the frozen river",
    "traded a riddle for a key",
    "dreamed of a city made of glass",
];

const ENDINGS: [&str; 10] = [
    "before the storm arrived",
    "while the bells rang softly",
    "as the moon rose",
    "without telling anyone",
    "until the candles burned out",
    "under a sky full of crows",
    "long after midnight",
    "as snow covered the roofs",
    "while the tide turned",
    "when the fog finally lifted",
];

/// Ten stories of ten sentences; three stories carry one dated sentence.
fn fiction(dir: &Path) {
    let mut prompts = String::new();
    let mut responses = String::new();
    let dated = [
        (2, "The clock tower was finished in 1887."),
        (5, "The bridge had stood since 1642."),
        (8, "The ship left the harbour in 1911."),
    ];
    for story in 0..10 {
        let id = format!("story-{}", story + 1);
        prompts.push_str(&format!(
            "{}\n",
            json!({ "id": id, "domain": "fiction", "text": format!("Write a short story about {}.", SUBJECTS[story].to_lowercase()) })
        ));
        let mut sentences: Vec<String> = (0..10)
            .map(|s| format!("{} {} {}.", SUBJECTS[(story + s) % 10], ACTIONS[(story * 3 + s) % 10], ENDINGS[(story * 7 + s * 3) % 10]))
            .collect();
        if let Some((_, line)) = dated.iter().find(|(i, _)| *i == story) {
            sentences[4] = line.to_string();
        }
        responses.push_str(&format!(
            "{}\n",
            json!({ "prompt_id": id, "model_id": "model-f", "text": sentences.join(" ") })
        ));
    }
    fs::write(dir.join("prompts.jsonl"), prompts).unwrap();
    fs::write(dir.join("responses.jsonl"), responses).unwrap();

    let rec = Recorders::new();
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path());
    cfg.k_overrides.insert("fiction".into(), Rational::from_integer(1));
    run_pipeline(
        &cfg,
        &rec.backends(LabelMode::Binary),
        &dir.join("prompts.jsonl"),
        &dir.join("responses.jsonl"),
        PromptKind::NonQa,
    )
    .unwrap();
    rec.write(dir);
}

fn main() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    e2e(&root.join("e2e"));
    let fiction_dir = root.join("fiction");
    fs::create_dir_all(&fiction_dir).unwrap();
    fiction(&fiction_dir);
    println!("fixtures written under {}", root.display());
}
