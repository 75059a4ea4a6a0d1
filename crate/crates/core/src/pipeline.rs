//! Stage orchestration over a run directory. Each stage reads the JSONL
//! files of earlier stages and writes its own, so any stage can be rerun or
//! replaced independently.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::analyzer::{self, AnalyzeError, ModelDomainMatrix};
use crate::backend::{content_hash, ChatBackend, GenerationParams};
use crate::corpus::{
    self, check_references, load_stage, persist_stage, write_atomic, Claim, Clock, CorpusError, EndpointDescriptor,
    Prompt, PromptKind, Response, RunManifest, Stage,
};
use crate::exec::{run_bounded, DEFAULT_CONCURRENCY};
use crate::extractor::{extract_batch, ExtractError};
use crate::retriever::{retrieve, EvidenceList, RetrieveError, SearchCache, SearchClient, MAX_RESULTS};
use crate::scorer::{
    compute_k, render_scorecard_table, score_domain, scorecards_csv, DomainScorecard, Rational, ResponseClaims,
    ScoreError,
};
use crate::verifier::{verify_claim, BinaryLabel, FieldOrder, LabelMode, VerificationRecord, VerifyError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCORECARD_CSV: &str = "scorecard.csv";
pub const SCORECARD_TXT: &str = "scorecard.txt";
pub const LEADERBOARD_CSV: &str = "leaderboard.csv";
pub const LEADERBOARD_TXT: &str = "leaderboard.txt";
pub const CORRELATIONS_CSV: &str = "correlations.csv";
pub const SEARCH_CACHE_DIR: &str = "search_cache";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing prerequisite file {}", .0.display())]
    MissingInput(PathBuf),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Retrieve(#[from] RetrieveError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("claim {0} has no evidence record")]
    MissingEvidence(String),
    #[error("scoring domain {domain}: {source}")]
    Score {
        domain: String,
        #[source]
        source: ScoreError,
    },
    #[error(transparent)]
    Analyze(#[from] AnalyzeError),
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub run_dir: PathBuf,
    pub concurrency: usize,
    pub num_results: usize,
    pub label_mode: LabelMode,
    pub field_order: FieldOrder,
    pub k_overrides: BTreeMap<String, Rational>,
    pub clock: Clock,
    pub force: bool,
    pub extract_params: GenerationParams,
    pub verify_params: GenerationParams,
    pub cache_max_age: Option<chrono::Duration>,
}

impl PipelineConfig {
    pub fn new(run_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            run_dir: run_dir.into(),
            concurrency: DEFAULT_CONCURRENCY,
            num_results: MAX_RESULTS,
            label_mode: LabelMode::default(),
            field_order: FieldOrder::default(),
            k_overrides: BTreeMap::new(),
            clock: Clock::System,
            force: false,
            extract_params: GenerationParams::default(),
            verify_params: GenerationParams::default(),
            cache_max_age: None,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.concurrency == 0 {
            return Err(PipelineError::Config("concurrency must be at least 1".into()));
        }
        if !(1..=MAX_RESULTS).contains(&self.num_results) {
            return Err(PipelineError::Config(format!(
                "num_results must be between 1 and {MAX_RESULTS}, got {}",
                self.num_results
            )));
        }
        if let Some((domain, _)) = self.k_overrides.iter().find(|(_, k)| **k <= Rational::from_integer(0)) {
            return Err(PipelineError::Config(format!("K override for {domain} must be positive")));
        }
        Ok(())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.run_dir.join(name)
    }

    fn search_cache(&self) -> SearchCache {
        let cache = SearchCache::new(self.path(SEARCH_CACHE_DIR));
        match self.cache_max_age {
            Some(age) => cache.with_max_age(age),
            None => cache,
        }
    }
}

#[derive(Clone)]
pub struct Backends {
    pub extractor: Arc<dyn ChatBackend>,
    pub verifier: Arc<dyn ChatBackend>,
    pub search: Arc<dyn SearchClient>,
}

impl Backends {
    fn descriptors(&self) -> Vec<EndpointDescriptor> {
        vec![
            EndpointDescriptor {
                role: "extractor".into(),
                kind: "chat".into(),
                target: self.extractor.describe(),
            },
            EndpointDescriptor {
                role: "verifier".into(),
                kind: "chat".into(),
                target: self.verifier.describe(),
            },
            EndpointDescriptor {
                role: "search".into(),
                kind: "search".into(),
                target: self.search.describe(),
            },
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StageOutcome {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunReport {
    pub stages: Vec<(&'static str, StageOutcome)>,
}

impl RunReport {
    pub fn outcome(&self, stage: &str) -> Option<StageOutcome> {
        self.stages.iter().find(|(s, _)| *s == stage).map(|(_, o)| *o)
    }
}

fn require(run_dir: &Path, stage: Stage) -> Result<(), PipelineError> {
    let path = stage.path(run_dir);
    if path.is_file() {
        Ok(())
    } else {
        Err(PipelineError::MissingInput(path))
    }
}

fn all_exist(paths: &[PathBuf]) -> bool {
    paths.iter().all(|p| p.is_file())
}

fn load_inputs(run_dir: &Path) -> Result<(Vec<Prompt>, Vec<Response>), PipelineError> {
    require(run_dir, Stage::Prompts)?;
    require(run_dir, Stage::Responses)?;
    Ok((load_stage(run_dir, Stage::Prompts)?, load_stage(run_dir, Stage::Responses)?))
}

fn load_claims(run_dir: &Path) -> Result<Vec<Claim>, PipelineError> {
    require(run_dir, Stage::Claims)?;
    Ok(load_stage(run_dir, Stage::Claims)?)
}

/// Copies validated prompts and responses into the run directory.
pub fn ingest(
    config: &PipelineConfig,
    prompts_path: &Path,
    responses_path: &Path,
    default_kind: PromptKind,
) -> Result<StageOutcome, PipelineError> {
    let outputs = [Stage::Prompts.path(&config.run_dir), Stage::Responses.path(&config.run_dir)];
    if !config.force && all_exist(&outputs) {
        return Ok(StageOutcome::Skipped);
    }
    let prompts = corpus::ingest_prompts(prompts_path, default_kind)?;
    let responses = corpus::ingest_responses(responses_path, &prompts)?;
    persist_stage(&config.run_dir, Stage::Prompts, &prompts)?;
    persist_stage(&config.run_dir, Stage::Responses, &responses)?;
    Ok(StageOutcome::Ran)
}

fn sorted_unique(values: impl Iterator<Item = String>) -> Vec<String> {
    let mut v: Vec<String> = values.collect();
    v.sort();
    v.dedup();
    v
}

/// Writes `manifest.json`. The run id hashes the ingested inputs and the
/// run settings, never credentials.
pub fn write_manifest(config: &PipelineConfig, backends: &Backends) -> Result<StageOutcome, PipelineError> {
    let path = config.path(MANIFEST_FILE);
    if !config.force && path.is_file() {
        return Ok(StageOutcome::Skipped);
    }
    let (prompts, responses) = load_inputs(&config.run_dir)?;
    let backend_config = backends.descriptors();
    let read = |stage: Stage| fs::read(stage.path(&config.run_dir)).unwrap_or_default();
    let mut fingerprint = Vec::new();
    fingerprint.extend(read(Stage::Prompts));
    fingerprint.extend(read(Stage::Responses));
    fingerprint.extend(
        format!(
            "{:?}|{:?}|{}|{:?}|{:?}|{:?}",
            config.label_mode,
            config.field_order,
            config.num_results,
            config.k_overrides,
            config.extract_params,
            backend_config
        )
        .into_bytes(),
    );
    let manifest = RunManifest {
        run_id: content_hash(&String::from_utf8_lossy(&fingerprint))[..16].to_string(),
        model_ids: sorted_unique(responses.iter().map(|r| r.model_id.clone())),
        domains: sorted_unique(prompts.iter().map(|p| p.domain.clone())),
        backend_config,
        created_at: config.clock.now(),
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write_atomic(&path, json.as_bytes())?;
    Ok(StageOutcome::Ran)
}

/// Runs windowed claim extraction over every response.
pub fn extract_stage(config: &PipelineConfig, backend: &dyn ChatBackend) -> Result<StageOutcome, PipelineError> {
    let (prompts, responses) = load_inputs(&config.run_dir)?;
    let by_id: HashMap<&str, &Prompt> = prompts.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut jobs = Vec::with_capacity(responses.len());
    for r in &responses {
        let p = by_id.get(r.prompt_id.as_str()).ok_or_else(|| {
            PipelineError::Corpus(CorpusError::DanglingReference {
                from: r.id.clone(),
                kind: "prompt",
                target: r.prompt_id.clone(),
            })
        })?;
        jobs.push((r, *p));
    }
    let extractions = extract_batch(&jobs, backend, config.extract_params, config.concurrency)?;
    let claims: Vec<Claim> = extractions.into_iter().flat_map(|e| e.claims).collect();
    persist_stage(&config.run_dir, Stage::Claims, &claims)?;
    Ok(StageOutcome::Ran)
}

/// Retrieves evidence for every claim. Each distinct claim text is searched
/// once; later claims with the same text reuse that result.
pub fn retrieve_stage(config: &PipelineConfig, client: &dyn SearchClient) -> Result<StageOutcome, PipelineError> {
    let claims = load_claims(&config.run_dir)?;
    let cache = config.search_cache();

    let mut first: HashMap<&str, usize> = HashMap::new();
    let mut unique: Vec<&Claim> = Vec::new();
    for c in &claims {
        first.entry(c.text.as_str()).or_insert_with(|| {
            unique.push(c);
            unique.len() - 1
        });
    }
    let fetched = run_bounded(&unique, config.concurrency, |_, claim| {
        retrieve(claim, client, Some(&cache), config.num_results, config.clock)
    });
    let fetched: Vec<EvidenceList> = fetched.into_iter().collect::<Result<_, _>>()?;

    let mut evidence = Vec::with_capacity(claims.len());
    for c in &claims {
        let src = &fetched[first[c.text.as_str()]];
        if src.claim_id == c.id {
            evidence.push(src.clone());
        } else {
            evidence.push(EvidenceList {
                claim_id: c.id.clone(),
                cache_hit: true,
                ..src.clone()
            });
        }
    }
    persist_stage(&config.run_dir, Stage::Evidence, &evidence)?;
    Ok(StageOutcome::Ran)
}

/// Verifies every claim against its evidence list.
pub fn verify_stage(config: &PipelineConfig, backend: &dyn ChatBackend) -> Result<StageOutcome, PipelineError> {
    let claims = load_claims(&config.run_dir)?;
    require(&config.run_dir, Stage::Evidence)?;
    let evidence: Vec<EvidenceList> = load_stage(&config.run_dir, Stage::Evidence)?;
    let by_claim: HashMap<&str, &EvidenceList> = evidence.iter().map(|e| (e.claim_id.as_str(), e)).collect();
    let mut jobs = Vec::with_capacity(claims.len());
    for c in &claims {
        let e = by_claim
            .get(c.id.as_str())
            .ok_or_else(|| PipelineError::MissingEvidence(c.id.clone()))?;
        jobs.push((c, *e));
    }
    let records = run_bounded(&jobs, config.concurrency, |_, (claim, ev)| {
        verify_claim(
            claim,
            ev,
            backend,
            config.verify_params,
            config.label_mode,
            config.field_order,
        )
    });
    let records: Vec<VerificationRecord> = records.into_iter().collect::<Result<_, _>>()?;
    persist_stage(&config.run_dir, Stage::Verdicts, &records)?;
    Ok(StageOutcome::Ran)
}

/// Scores every (model, domain) pair. K is pooled per domain across all
/// models in the run unless overridden.
pub fn score_stage(config: &PipelineConfig) -> Result<Vec<DomainScorecard>, PipelineError> {
    let (prompts, responses) = load_inputs(&config.run_dir)?;
    let claims = load_claims(&config.run_dir)?;
    require(&config.run_dir, Stage::Verdicts)?;
    let verdicts: Vec<VerificationRecord> = load_stage(&config.run_dir, Stage::Verdicts)?;
    check_references(&prompts, &responses, &claims)?;

    let labels: HashMap<String, BinaryLabel> = verdicts.into_iter().map(|v| (v.claim_id, v.binary)).collect();
    let mut claim_ids: HashMap<&str, Vec<String>> = HashMap::new();
    for c in &claims {
        claim_ids.entry(c.response_id.as_str()).or_default().push(c.id.clone());
    }
    let domain_of: HashMap<&str, &str> = prompts.iter().map(|p| (p.id.as_str(), p.domain.as_str())).collect();

    // domain -> model -> responses
    let mut grouped: BTreeMap<&str, BTreeMap<&str, Vec<ResponseClaims>>> = BTreeMap::new();
    for r in &responses {
        grouped
            .entry(domain_of[r.prompt_id.as_str()])
            .or_default()
            .entry(r.model_id.as_str())
            .or_default()
            .push(ResponseClaims {
                response_id: r.id.clone(),
                sentence_count: r.sentence_count(),
                claim_ids: claim_ids.remove(r.id.as_str()).unwrap_or_default(),
            });
    }

    let mut cards = Vec::new();
    for (domain, models) in &grouped {
        let score_err = |source| PipelineError::Score {
            domain: domain.to_string(),
            source,
        };
        let counts: Vec<usize> = models.values().flatten().map(|r| r.claim_ids.len()).collect();
        let k = compute_k(&counts, config.k_overrides.get(*domain).copied()).map_err(score_err)?;
        for (model, rs) in models {
            cards.push(score_domain(domain, model, rs, &labels, Some(k)).map_err(score_err)?);
        }
    }
    cards.sort_by(|a, b| (&a.model_id, &a.domain).cmp(&(&b.model_id, &b.domain)));

    let scores: Vec<_> = cards.iter().flat_map(|c| c.response_scores.iter().cloned()).collect();
    persist_stage(&config.run_dir, Stage::Scores, &scores)?;
    write_atomic(&config.path(SCORECARD_CSV), scorecards_csv(&cards).as_bytes())?;
    write_atomic(&config.path(SCORECARD_TXT), render_scorecard_table(&cards).as_bytes())?;
    Ok(cards)
}

/// Writes leaderboard and correlation files for scorecard CSVs into
/// `out_dir`. Correlations need two models and a ranking without full ties;
/// otherwise they are skipped with a warning.
pub fn analyze_scorecards(scorecards: &[PathBuf], out_dir: &Path) -> Result<ModelDomainMatrix, PipelineError> {
    for p in scorecards {
        if !p.is_file() {
            return Err(PipelineError::MissingInput(p.clone()));
        }
    }
    let cells = analyzer::read_scorecard_cells(scorecards)?;
    let matrix = ModelDomainMatrix::from_cells(&cells)?;
    let board = analyzer::render_leaderboard(&matrix);
    write_atomic(&out_dir.join(LEADERBOARD_TXT), board.to_text().as_bytes())?;
    write_atomic(&out_dir.join(LEADERBOARD_CSV), board.to_csv().as_bytes())?;
    match analyzer::correlation_matrix(&matrix) {
        Ok(corr) => write_atomic(&out_dir.join(CORRELATIONS_CSV), corr.to_csv().as_bytes())?,
        Err(e) => log::warn!("skipping correlations: {e}"),
    }
    Ok(matrix)
}

pub fn analyze_stage(config: &PipelineConfig) -> Result<ModelDomainMatrix, PipelineError> {
    analyze_scorecards(&[config.path(SCORECARD_CSV)], &config.run_dir)
}

fn gated<F>(config: &PipelineConfig, outputs: &[PathBuf], run: F) -> Result<StageOutcome, PipelineError>
where
    F: FnOnce() -> Result<(), PipelineError>,
{
    if !config.force && all_exist(outputs) {
        return Ok(StageOutcome::Skipped);
    }
    run()?;
    Ok(StageOutcome::Ran)
}

/// Runs every stage in order, skipping those whose outputs already exist
/// unless `force` is set.
pub fn run_pipeline(
    config: &PipelineConfig,
    backends: &Backends,
    prompts_path: &Path,
    responses_path: &Path,
    default_kind: PromptKind,
) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let dir = &config.run_dir;
    let mut report = RunReport::default();

    report.stages.push(("ingest", ingest(config, prompts_path, responses_path, default_kind)?));
    report.stages.push(("manifest", write_manifest(config, backends)?));
    let outcome = gated(config, &[Stage::Claims.path(dir)], || {
        extract_stage(config, backends.extractor.as_ref()).map(drop)
    })?;
    report.stages.push(("extract", outcome));
    let outcome = gated(config, &[Stage::Evidence.path(dir)], || {
        retrieve_stage(config, backends.search.as_ref()).map(drop)
    })?;
    report.stages.push(("retrieve", outcome));
    let outcome = gated(config, &[Stage::Verdicts.path(dir)], || {
        verify_stage(config, backends.verifier.as_ref()).map(drop)
    })?;
    report.stages.push(("verify", outcome));
    let outcome = gated(
        config,
        &[Stage::Scores.path(dir), config.path(SCORECARD_CSV), config.path(SCORECARD_TXT)],
        || score_stage(config).map(drop),
    )?;
    report.stages.push(("score", outcome));
    let outcome = gated(config, &[config.path(LEADERBOARD_TXT), config.path(LEADERBOARD_CSV)], || {
        analyze_stage(config).map(drop)
    })?;
    report.stages.push(("analyze", outcome));
    for (stage, outcome) in &report.stages {
        log::info!("{stage}: {outcome:?}");
    }
    Ok(report)
}

/// Backend calls a stage would make. `None` means the count depends on
/// the output of an earlier stage that has not run yet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePlan {
    pub stage: &'static str,
    pub skipped: bool,
    pub calls: Option<usize>,
}

fn uncached_queries(config: &PipelineConfig, claims: &[Claim]) -> usize {
    let cache = config.search_cache();
    let now = config.clock.now();
    sorted_unique(claims.iter().map(|c| c.text.clone()))
        .iter()
        .filter(|q| !cache.contains(q, now))
        .count()
}

/// Backend calls one stage would make if run now over the run directory.
pub fn stage_calls(config: &PipelineConfig, stage: &str) -> Result<usize, PipelineError> {
    let dir = &config.run_dir;
    match stage {
        "extract" => Ok(load_inputs(dir)?.1.iter().map(Response::sentence_count).sum()),
        "retrieve" => Ok(uncached_queries(config, &load_claims(dir)?)),
        "verify" => Ok(load_claims(dir)?.len()),
        _ => Ok(0),
    }
}

/// Extraction calls for input files: one per sentence.
pub fn count_windows(prompts_path: &Path, responses_path: &Path, default_kind: PromptKind) -> Result<usize, PipelineError> {
    let prompts = corpus::ingest_prompts(prompts_path, default_kind)?;
    let responses = corpus::ingest_responses(responses_path, &prompts)?;
    Ok(responses.iter().map(Response::sentence_count).sum())
}

/// Computes the call plan of a full run without contacting any backend or
/// writing files.
pub fn plan(
    config: &PipelineConfig,
    prompts_path: &Path,
    responses_path: &Path,
    default_kind: PromptKind,
) -> Result<Vec<StagePlan>, PipelineError> {
    config.validate()?;
    let dir = &config.run_dir;
    let skip = |outputs: &[PathBuf]| !config.force && all_exist(outputs);
    let inputs_skipped = skip(&[Stage::Prompts.path(dir), Stage::Responses.path(dir)]);
    let extract_skipped = skip(&[Stage::Claims.path(dir)]);
    let retrieve_skipped = skip(&[Stage::Evidence.path(dir)]);
    let verify_skipped = skip(&[Stage::Verdicts.path(dir)]);

    let windows = if inputs_skipped {
        stage_calls(config, "extract")?
    } else {
        count_windows(prompts_path, responses_path, default_kind)?
    };
    let claims: Option<Vec<Claim>> = if extract_skipped {
        Some(load_claims(dir)?)
    } else {
        None
    };
    let count = |skipped: bool, n: Option<usize>| if skipped { Some(0) } else { n };
    Ok(vec![
        StagePlan {
            stage: "extract",
            skipped: extract_skipped,
            calls: count(extract_skipped, Some(windows)),
        },
        StagePlan {
            stage: "retrieve",
            skipped: retrieve_skipped,
            calls: count(retrieve_skipped, claims.as_deref().map(|c| uncached_queries(config, c))),
        },
        StagePlan {
            stage: "verify",
            skipped: verify_skipped,
            calls: count(verify_skipped, claims.as_ref().map(Vec::len)),
        },
        StagePlan {
            stage: "score",
            skipped: skip(&[Stage::Scores.path(dir)]),
            calls: Some(0),
        },
        StagePlan {
            stage: "analyze",
            skipped: skip(&[config.path(LEADERBOARD_TXT)]),
            calls: Some(0),
        },
    ])
}

pub fn render_plan(plan: &[StagePlan]) -> String {
    let mut out = String::new();
    for p in plan {
        let calls = p.calls.map_or_else(|| "depends on extracted claims".to_string(), |n| n.to_string());
        let status = if p.skipped { " (output exists, skipped)" } else { "" };
        out.push_str(&format!("{:<9} calls: {calls}{status}\n", p.stage));
    }
    out
}
