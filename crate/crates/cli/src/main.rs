use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use veriscore::backend::{ChatBackend, EndpointConfig, GenerationParams, HttpChatBackend, MockChatBackend};
use veriscore::corpus::{Clock, PromptKind};
use veriscore::exec::{RateLimiter, RetryPolicy, DEFAULT_CONCURRENCY};
use veriscore::pipeline::{self, Backends, PipelineConfig, StagePlan};
use veriscore::retriever::{HttpSearchClient, MockSearchClient, SearchClient, MAX_RESULTS};
use veriscore::verifier::{FieldOrder, LabelMode};

mod settings;

use settings::{env_key, layered, merge_k, ConfigFile, EndpointFile};

#[derive(Parser)]
#[command(name = "veriscore", version, about = "Long-form factuality evaluation")]
struct Cli {
    /// TOML config file; flags and environment take precedence over it
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage, skipping stages whose outputs already exist
    Run {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        opts: Opts,
    },
    /// Extract claims (ingests --prompts/--responses first when given)
    Extract {
        #[command(flatten)]
        inputs: OptionalInputs,
        #[command(flatten)]
        opts: Opts,
    },
    /// Retrieve search evidence for extracted claims
    Retrieve {
        #[command(flatten)]
        opts: Opts,
    },
    /// Verify claims against their evidence
    Verify {
        #[command(flatten)]
        opts: Opts,
    },
    /// Score verified claims and write scorecards
    Score {
        #[command(flatten)]
        opts: Opts,
    },
    /// Build the leaderboard and domain correlations
    Analyze {
        /// Scorecard CSVs to combine; defaults to the run directory's own
        #[arg(long, num_args = 1.., value_name = "CSV")]
        scores: Vec<PathBuf>,
        #[command(flatten)]
        opts: Opts,
    },
}

#[derive(Args)]
struct Inputs {
    /// Prompts JSONL
    #[arg(long)]
    prompts: PathBuf,
    /// Responses JSONL
    #[arg(long)]
    responses: PathBuf,
    /// Kind for prompt lines that do not set one
    #[arg(long, default_value = "nonqa")]
    kind: PromptKind,
}

#[derive(Args)]
struct OptionalInputs {
    #[arg(long, requires = "responses")]
    prompts: Option<PathBuf>,
    #[arg(long, requires = "prompts")]
    responses: Option<PathBuf>,
    #[arg(long, default_value = "nonqa")]
    kind: PromptKind,
}

#[derive(Args)]
struct Opts {
    /// Run directory holding stage files
    #[arg(long)]
    run_dir: PathBuf,
    /// Maximum concurrent backend calls
    #[arg(long)]
    concurrency: Option<usize>,
    /// Search results kept per claim (1-10)
    #[arg(long)]
    num_results: Option<usize>,
    /// Verifier label set [default: binary]
    #[arg(long)]
    label_mode: Option<LabelMode>,
    /// Verification prompt layout; claude puts evidence first [default: standard]
    #[arg(long)]
    field_order: Option<FieldOrder>,
    /// Fixed K for a domain, e.g. --k bio=32 (repeatable)
    #[arg(long = "k", value_name = "DOMAIN=VALUE")]
    k: Vec<String>,
    /// Transcript replayed for extraction and verification calls
    #[arg(long, value_name = "FILE")]
    mock_llm: Option<PathBuf>,
    /// Transcript replayed for search calls
    #[arg(long, value_name = "FILE")]
    mock_search: Option<PathBuf>,
    #[arg(long, env = "LLM_BASE_URL")]
    llm_base_url: Option<String>,
    #[arg(long, env = "VERIFIER_BASE_URL")]
    verifier_base_url: Option<String>,
    #[arg(long, env = "SEARCH_BASE_URL")]
    search_base_url: Option<String>,
    #[arg(long, env = "LLM_MODEL")]
    extractor_model: Option<String>,
    #[arg(long, env = "VERIFIER_MODEL")]
    verifier_model: Option<String>,
    /// Recompute stages even when their outputs exist
    #[arg(long)]
    force: bool,
    /// Print the call plan and exit without contacting any backend
    #[arg(long)]
    dry_run: bool,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Extractor,
    Verifier,
    Search,
}

struct Session {
    opts: Opts,
    file: ConfigFile,
    config: PipelineConfig,
}

impl Session {
    fn new(opts: Opts, file: ConfigFile) -> Result<Self> {
        let mut config = PipelineConfig::new(&opts.run_dir);
        config.concurrency = layered(opts.concurrency, file.concurrency, DEFAULT_CONCURRENCY);
        config.num_results = layered(opts.num_results, file.num_results, MAX_RESULTS);
        config.label_mode = layered(opts.label_mode, file.label_mode, LabelMode::default());
        config.field_order = layered(opts.field_order, file.field_order, FieldOrder::default());
        config.k_overrides = merge_k(&file.k, &opts.k)?;
        config.force = opts.force;
        config.cache_max_age = file.cache_max_age_hours.map(chrono::Duration::hours);
        config.extract_params = params(&file.extractor);
        config.verify_params = params(&file.verifier);
        // Offline search yields reproducible timestamps.
        config.clock = if opts.mock_search.is_some() {
            Clock::epoch()
        } else {
            Clock::System
        };
        config.validate()?;
        Ok(Session { opts, file, config })
    }

    /// Fails before any paid call when a live backend lacks credentials.
    fn check_credentials(&self, roles: &[Role]) -> Result<()> {
        let mut missing = Vec::new();
        for role in roles {
            match role {
                Role::Extractor if self.opts.mock_llm.is_none() && env_key("LLM_API_KEY").is_none() => {
                    missing.push("LLM_API_KEY")
                }
                Role::Verifier
                    if self.opts.mock_llm.is_none()
                        && env_key("VERIFIER_API_KEY").or_else(|| env_key("LLM_API_KEY")).is_none() =>
                {
                    missing.push("VERIFIER_API_KEY (or LLM_API_KEY)")
                }
                Role::Search if self.opts.mock_search.is_none() && env_key("SEARCH_API_KEY").is_none() => {
                    missing.push("SEARCH_API_KEY")
                }
                _ => {}
            }
        }
        missing.dedup();
        if !missing.is_empty() {
            bail!(
                "missing credentials: {} (set them or pass --mock-llm/--mock-search)",
                missing.join(", ")
            );
        }
        Ok(())
    }

    fn chat(&self, role: Role) -> Result<Arc<dyn ChatBackend>> {
        let (name, section) = match role {
            Role::Verifier => ("verifier", &self.file.verifier),
            _ => ("extractor", &self.file.extractor),
        };
        if let Some(path) = &self.opts.mock_llm {
            let mock = MockChatBackend::from_file(&format!("mock-{name}"), path)?;
            return Ok(Arc::new(mock));
        }
        let llm_base = layered(
            self.opts.llm_base_url.clone(),
            self.file.extractor.base_url.clone(),
            settings::DEFAULT_LLM_BASE_URL.to_string(),
        );
        let endpoint = match role {
            Role::Verifier => EndpointConfig {
                base_url: layered(self.opts.verifier_base_url.clone(), section.base_url.clone(), llm_base),
                model: layered(
                    self.opts.verifier_model.clone(),
                    section.model.clone(),
                    settings::DEFAULT_MODEL.into(),
                ),
                api_key: env_key("VERIFIER_API_KEY").or_else(|| env_key("LLM_API_KEY")).unwrap_or_default(),
            },
            _ => EndpointConfig {
                base_url: llm_base,
                model: layered(
                    self.opts.extractor_model.clone(),
                    section.model.clone(),
                    settings::DEFAULT_MODEL.into(),
                ),
                api_key: env_key("LLM_API_KEY").unwrap_or_default(),
            },
        };
        Ok(Arc::new(HttpChatBackend::new(endpoint, RetryPolicy::default(), limiter(section))?))
    }

    fn search(&self) -> Result<Arc<dyn SearchClient>> {
        if let Some(path) = &self.opts.mock_search {
            return Ok(Arc::new(MockSearchClient::from_file(path)?));
        }
        let base = layered(
            self.opts.search_base_url.clone(),
            self.file.search.base_url.clone(),
            settings::DEFAULT_SEARCH_BASE_URL.to_string(),
        );
        let key = env_key("SEARCH_API_KEY").unwrap_or_default();
        Ok(Arc::new(HttpSearchClient::new(
            &base,
            &key,
            RetryPolicy::default(),
            limiter(&self.file.search),
        )?))
    }

    fn backends(&self) -> Result<Backends> {
        Ok(Backends {
            extractor: self.chat(Role::Extractor)?,
            verifier: self.chat(Role::Verifier)?,
            search: self.search()?,
        })
    }
}

fn params(section: &EndpointFile) -> GenerationParams {
    GenerationParams {
        max_tokens: section.max_tokens.unwrap_or(settings::DEFAULT_MAX_TOKENS),
        ..GenerationParams::default()
    }
}

fn limiter(section: &EndpointFile) -> RateLimiter {
    section
        .requests_per_second
        .map_or_else(RateLimiter::unlimited, RateLimiter::per_second)
}

fn print_plan(plan: &[StagePlan]) {
    print!("{}", pipeline::render_plan(plan));
}

fn ingest_if_given(ctx: &Session, inputs: &OptionalInputs) -> Result<()> {
    if let (Some(p), Some(r)) = (&inputs.prompts, &inputs.responses) {
        pipeline::ingest(&ctx.config, p, r, inputs.kind)?;
    }
    Ok(())
}

fn stage_plan(session: &Session, stage: &'static str) -> Result<()> {
    let calls = pipeline::stage_calls(&session.config, stage)?;
    print_plan(&[StagePlan {
        stage,
        skipped: false,
        calls: Some(calls),
    }]);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Run { inputs, opts } => {
            let ctx = Session::new(opts, file)?;
            if ctx.opts.dry_run {
                print_plan(&pipeline::plan(&ctx.config, &inputs.prompts, &inputs.responses, inputs.kind)?);
                return Ok(());
            }
            ctx.check_credentials(&[Role::Extractor, Role::Verifier, Role::Search])?;
            let backends = ctx.backends()?;
            let report = pipeline::run_pipeline(&ctx.config, &backends, &inputs.prompts, &inputs.responses, inputs.kind)?;
            for (stage, outcome) in &report.stages {
                eprintln!("{stage:<9} {outcome:?}");
            }
            print_scorecard(&ctx.config.run_dir)?;
        }
        Command::Extract { inputs, opts } => {
            let ctx = Session::new(opts, file)?;
            if ctx.opts.dry_run {
                if let (Some(p), Some(r)) = (&inputs.prompts, &inputs.responses) {
                    let calls = pipeline::count_windows(p, r, inputs.kind)?;
                    print_plan(&[StagePlan {
                        stage: "extract",
                        skipped: false,
                        calls: Some(calls),
                    }]);
                    return Ok(());
                }
                return stage_plan(&ctx, "extract");
            }
            ctx.check_credentials(&[Role::Extractor])?;
            ingest_if_given(&ctx, &inputs)?;
            pipeline::extract_stage(&ctx.config, ctx.chat(Role::Extractor)?.as_ref())?;
        }
        Command::Retrieve { opts } => {
            let ctx = Session::new(opts, file)?;
            if ctx.opts.dry_run {
                return stage_plan(&ctx, "retrieve");
            }
            ctx.check_credentials(&[Role::Search])?;
            pipeline::retrieve_stage(&ctx.config, ctx.search()?.as_ref())?;
        }
        Command::Verify { opts } => {
            let ctx = Session::new(opts, file)?;
            if ctx.opts.dry_run {
                return stage_plan(&ctx, "verify");
            }
            ctx.check_credentials(&[Role::Verifier])?;
            pipeline::verify_stage(&ctx.config, ctx.chat(Role::Verifier)?.as_ref())?;
        }
        Command::Score { opts } => {
            let ctx = Session::new(opts, file)?;
            if ctx.opts.dry_run {
                return stage_plan(&ctx, "score");
            }
            pipeline::score_stage(&ctx.config)?;
            print_scorecard(&ctx.config.run_dir)?;
        }
        Command::Analyze { scores, opts } => {
            let ctx = Session::new(opts, file)?;
            if ctx.opts.dry_run {
                println!("analyze   calls: 0");
                return Ok(());
            }
            let dir = &ctx.config.run_dir;
            if scores.is_empty() {
                pipeline::analyze_stage(&ctx.config)?;
            } else {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                pipeline::analyze_scorecards(&scores, dir)?;
            }
            print!("{}", read(&dir.join(pipeline::LEADERBOARD_TXT))?);
        }
    }
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn print_scorecard(run_dir: &Path) -> Result<()> {
    print!("{}", read(&run_dir.join(pipeline::SCORECARD_TXT))?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
