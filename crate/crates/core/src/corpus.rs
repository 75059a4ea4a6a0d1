//! Data model shared by every pipeline stage, input ingestion, and
//! line-delimited JSON persistence of stage outputs.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segmenter::{self, SentenceRange, Span};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: line {line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: line {line}: duplicate id {id:?}")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },
    #[error("dangling reference: {from} refers to unknown {kind} {target:?}")]
    DanglingReference {
        from: String,
        kind: &'static str,
        target: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl CorpusError {
    fn io(path: &Path, source: io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    /// The prompt text is a question that is prepended to every window.
    Qa,
    /// No question exists; long paragraphs use their lead sentence as anchor.
    NonQa,
}

impl std::str::FromStr for PromptKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "qa" => Ok(PromptKind::Qa),
            "nonqa" | "non-qa" => Ok(PromptKind::NonQa),
            other => Err(format!("unknown prompt kind {other:?} (expected qa or nonqa)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub domain: String,
    pub kind: PromptKind,
    pub text: String,
}

/// One model output under evaluation, already segmented.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub id: String,
    pub prompt_id: String,
    pub model_id: String,
    pub text: String,
    pub sentences: Vec<Span>,
    pub paragraphs: Vec<SentenceRange>,
}

impl Response {
    /// Builds a response and segments its text. The id is derived from the
    /// model and prompt, so one model answers each prompt at most once.
    pub fn new(prompt_id: &str, model_id: &str, text: &str) -> Self {
        let seg = segmenter::segment(text);
        Response {
            id: response_id(model_id, prompt_id),
            prompt_id: prompt_id.to_string(),
            model_id: model_id.to_string(),
            text: text.to_string(),
            sentences: seg.sentences,
            paragraphs: seg.paragraphs,
        }
    }

    pub fn sentence(&self, index: usize) -> &str {
        self.sentences[index].slice(&self.text)
    }

    pub fn sentence_texts(&self) -> Vec<&str> {
        self.sentences.iter().map(|s| s.slice(&self.text)).collect()
    }

    pub fn sentence_count(&self) -> usize {
        self.sentences.len()
    }
}

pub fn response_id(model_id: &str, prompt_id: &str) -> String {
    format!("{model_id}::{prompt_id}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub id: String,
    pub response_id: String,
    pub sentence_index: usize,
    pub text: String,
}

/// Endpoint description recorded in the manifest. Never carries secrets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointDescriptor {
    pub role: String,
    pub kind: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub model_ids: Vec<String>,
    pub domains: Vec<String>,
    pub backend_config: Vec<EndpointDescriptor>,
    pub created_at: DateTime<Utc>,
}

/// Source of timestamps written into records. Fixed clocks make offline
/// runs reproducible byte for byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    System,
    Fixed(DateTime<Utc>),
}

impl Clock {
    pub fn now(self) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Fixed(t) => t,
        }
    }

    pub fn epoch() -> Self {
        Clock::Fixed(DateTime::<Utc>::UNIX_EPOCH)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Prompts,
    Responses,
    Claims,
    Evidence,
    Verdicts,
    Scores,
}

impl Stage {
    pub fn file_name(self) -> &'static str {
        match self {
            Stage::Prompts => "prompts.jsonl",
            Stage::Responses => "responses.jsonl",
            Stage::Claims => "claims.jsonl",
            Stage::Evidence => "evidence.jsonl",
            Stage::Verdicts => "verdicts.jsonl",
            Stage::Scores => "scores.jsonl",
        }
    }

    pub fn path(self, run_dir: &Path) -> PathBuf {
        run_dir.join(self.file_name())
    }
}

#[derive(Deserialize)]
struct PromptLine {
    id: String,
    domain: String,
    text: String,
    #[serde(default)]
    kind: Option<PromptKind>,
}

#[derive(Deserialize)]
struct ResponseLine {
    prompt_id: String,
    model_id: String,
    text: String,
}

/// Iterates over non-blank lines, yielding 1-based line numbers.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, CorpusError> {
    let file = fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn parse_line<T: DeserializeOwned>(path: &Path, line_no: usize, line: &str) -> Result<T, CorpusError> {
    serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
        path: path.to_path_buf(),
        line: line_no,
        message: e.to_string(),
    })
}

/// Reads a prompt file. A per-line `kind` overrides `default_kind`.
pub fn ingest_prompts(path: &Path, default_kind: PromptKind) -> Result<Vec<Prompt>, CorpusError> {
    let mut seen = HashSet::new();
    let mut prompts = Vec::new();
    for (line_no, line) in read_lines(path)? {
        let rec: PromptLine = parse_line(path, line_no, &line)?;
        if rec.id.is_empty() {
            return Err(CorpusError::Malformed {
                path: path.to_path_buf(),
                line: line_no,
                message: "empty id".into(),
            });
        }
        if !seen.insert(rec.id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: path.to_path_buf(),
                line: line_no,
                id: rec.id,
            });
        }
        prompts.push(Prompt {
            id: rec.id,
            domain: rec.domain,
            kind: rec.kind.unwrap_or(default_kind),
            text: rec.text,
        });
    }
    Ok(prompts)
}

/// Reads and segments a response file, resolving each line against `prompts`.
pub fn ingest_responses(path: &Path, prompts: &[Prompt]) -> Result<Vec<Response>, CorpusError> {
    let known: HashSet<&str> = prompts.iter().map(|p| p.id.as_str()).collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line_no, line) in read_lines(path)? {
        let rec: ResponseLine = parse_line(path, line_no, &line)?;
        if !known.contains(rec.prompt_id.as_str()) {
            return Err(CorpusError::DanglingReference {
                from: format!("{}: line {line_no}", path.display()),
                kind: "prompt",
                target: rec.prompt_id,
            });
        }
        let response = Response::new(&rec.prompt_id, &rec.model_id, &rec.text);
        if !seen.insert(response.id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: path.to_path_buf(),
                line: line_no,
                id: response.id,
            });
        }
        out.push(response);
    }
    Ok(out)
}

/// Replaces `<run_dir>/<stage>.jsonl` with one JSON line per record.
///
/// The file is written to a sibling temp file and renamed into place, so a
/// reader sees either the old contents or the complete new contents.
pub fn persist_stage<T: Serialize>(run_dir: &Path, stage: Stage, records: &[T]) -> Result<PathBuf, CorpusError> {
    let target = stage.path(run_dir);
    let mut buf = Vec::new();
    for rec in records {
        serde_json::to_writer(&mut buf, rec).map_err(|e| CorpusError::io(&target, e.into()))?;
        buf.push(b'\n');
    }
    write_atomic(&target, &buf)?;
    Ok(target)
}

pub fn load_stage<T: DeserializeOwned>(run_dir: &Path, stage: Stage) -> Result<Vec<T>, CorpusError> {
    let path = stage.path(run_dir);
    read_lines(&path)?
        .into_iter()
        .map(|(n, line)| parse_line(&path, n, &line))
        .collect()
}

pub fn write_atomic(target: &Path, contents: &[u8]) -> Result<(), CorpusError> {
    let dir = target.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
    let name = target.file_name().and_then(|n| n.to_str()).unwrap_or("stage");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, target)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CorpusError::io(target, e));
    }
    Ok(())
}

/// Checks that every response names a known prompt and every claim a known
/// response with a valid sentence index.
pub fn check_references(prompts: &[Prompt], responses: &[Response], claims: &[Claim]) -> Result<(), CorpusError> {
    let prompt_ids: HashSet<&str> = prompts.iter().map(|p| p.id.as_str()).collect();
    for r in responses {
        if !prompt_ids.contains(r.prompt_id.as_str()) {
            return Err(CorpusError::DanglingReference {
                from: format!("response {}", r.id),
                kind: "prompt",
                target: r.prompt_id.clone(),
            });
        }
    }
    let by_id: HashMap<&str, &Response> = responses.iter().map(|r| (r.id.as_str(), r)).collect();
    for c in claims {
        match by_id.get(c.response_id.as_str()) {
            None => {
                return Err(CorpusError::DanglingReference {
                    from: format!("claim {}", c.id),
                    kind: "response",
                    target: c.response_id.clone(),
                })
            }
            Some(r) if c.sentence_index >= r.sentences.len() => {
                return Err(CorpusError::DanglingReference {
                    from: format!("claim {}", c.id),
                    kind: "sentence",
                    target: c.sentence_index.to_string(),
                })
            }
            Some(_) => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn ingest_two_qa_lines() {
        let dir = TempDir::new().unwrap();
        let p = write(
            &dir,
            "p.jsonl",
            "{\"id\":\"q1\",\"domain\":\"eli5\",\"text\":\"Why?\"}\n{\"id\":\"q2\",\"domain\":\"eli5\",\"text\":\"How?\"}\n",
        );
        let prompts = ingest_prompts(&p, PromptKind::Qa).unwrap();
        assert_eq!(prompts.len(), 2);
        assert!(prompts.iter().all(|p| p.kind == PromptKind::Qa));
        assert_eq!(prompts[1].text, "How?");
    }

    #[test]
    fn per_line_kind_overrides_default() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "p.jsonl", "{\"id\":\"b\",\"domain\":\"books\",\"text\":\"x\",\"kind\":\"nonqa\"}\n");
        let prompts = ingest_prompts(&p, PromptKind::Qa).unwrap();
        assert_eq!(prompts[0].kind, PromptKind::NonQa);
    }

    #[test]
    fn duplicate_id_names_id_and_line() {
        let dir = TempDir::new().unwrap();
        let p = write(
            &dir,
            "p.jsonl",
            "{\"id\":\"q1\",\"domain\":\"d\",\"text\":\"a\"}\n{\"id\":\"q2\",\"domain\":\"d\",\"text\":\"b\"}\n{\"id\":\"q1\",\"domain\":\"d\",\"text\":\"c\"}\n",
        );
        let err = ingest_prompts(&p, PromptKind::Qa).unwrap_err();
        match &err {
            CorpusError::DuplicateId { line, id, .. } => {
                assert_eq!(*line, 3);
                assert_eq!(id, "q1");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("\"q1\""));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "p.jsonl", "{\"id\":\"q1\",\"domain\":\"d\",\"text\":\"a\"}\n{not json\n");
        let err = ingest_prompts(&p, PromptKind::Qa).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 2, .. }), "{err}");
    }

    #[test]
    fn empty_file_is_empty_list() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "p.jsonl", "");
        assert!(ingest_prompts(&p, PromptKind::NonQa).unwrap().is_empty());
    }

    #[test]
    fn responses_must_reference_known_prompts() {
        let dir = TempDir::new().unwrap();
        let prompts = vec![Prompt {
            id: "q1".into(),
            domain: "d".into(),
            kind: PromptKind::Qa,
            text: "Q?".into(),
        }];
        let good = write(&dir, "r.jsonl", "{\"prompt_id\":\"q1\",\"model_id\":\"m\",\"text\":\"Ants dig. Bees fly.\"}\n");
        let rs = ingest_responses(&good, &prompts).unwrap();
        assert_eq!(rs[0].id, "m::q1");
        assert_eq!(rs[0].sentence_texts(), vec!["Ants dig.", "Bees fly."]);

        let bad = write(&dir, "r2.jsonl", "{\"prompt_id\":\"zz\",\"model_id\":\"m\",\"text\":\"A.\"}\n");
        assert!(matches!(
            ingest_responses(&bad, &prompts),
            Err(CorpusError::DanglingReference { .. })
        ));
    }

    fn claims(n: usize) -> Vec<Claim> {
        (0..n)
            .map(|i| Claim {
                id: format!("m::q1#c{i}"),
                response_id: "m::q1".into(),
                sentence_index: i,
                text: format!("Claim {i}."),
            })
            .collect()
    }

    #[test]
    fn persist_writes_one_line_per_record_and_replaces() {
        let dir = TempDir::new().unwrap();
        let run = dir.path().join("run");
        let cs = claims(3);
        let path = persist_stage(&run, Stage::Claims, &cs).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 3);
        persist_stage(&run, Stage::Claims, &cs).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 3);
        let back: Vec<Claim> = load_stage(&run, Stage::Claims).unwrap();
        assert_eq!(back, cs);
        // no temp files left behind
        let names: Vec<_> = fs::read_dir(&run).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn persist_to_unwritable_location_fails_cleanly() {
        let dir = TempDir::new().unwrap();
        // a regular file where the run directory should be
        let blocker = write(&dir, "blocker", "x");
        let err = persist_stage(&blocker, Stage::Claims, &claims(3)).unwrap_err();
        assert!(matches!(err, CorpusError::Io { .. }));
        assert!(!blocker.join("claims.jsonl").exists());
        assert_eq!(fs::read_to_string(&blocker).unwrap(), "x");
    }

    #[test]
    fn reference_check_rejects_dangling_claims() {
        let prompts = vec![Prompt {
            id: "q1".into(),
            domain: "d".into(),
            kind: PromptKind::Qa,
            text: "Q?".into(),
        }];
        let responses = vec![Response::new("q1", "m", "One. Two. Three.")];
        assert!(check_references(&prompts, &responses, &claims(3)).is_ok());
        assert!(check_references(&prompts, &responses, &claims(4)).is_err());
        let mut orphan = claims(1);
        orphan[0].response_id = "other::q9".into();
        assert!(check_references(&prompts, &responses, &orphan).is_err());
    }
}
