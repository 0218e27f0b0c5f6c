//! End-to-end audit: profiles in, statistics and report files out.

mod config;
mod report;

pub use config::{
    AuditConfig, BackendKind, DatasetOptions, LexiconOptions, LiveOptions, Overrides, ReportFormat, SampleOptions,
};
pub use report::{emit_report, read_report, render_csv, render_json, render_svg, render_text, report_file_name};

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{
    ClientError, Completion, CompletionBackend, CompletionRequest, HttpBackend, HttpConfig, RecordingBackend,
    ReplayBackend, RetryPolicy, SimulatedBackend, Transport, UreqTransport,
};
use crate::corpus::{self, Gender, Profile, Verdict};
use crate::finetune::{self, DatasetMeta, FinetuneRecord, InterleaveConfig, RecordFormat, SanityCheck};
use crate::lexicon::{bundled_sources, Lexicon, LexiconError, SourceList};
use crate::metrics::{score_profile, TokenMatch};
use crate::par::{self, Execution};
use crate::prompting::{self, build_prompt, parse_response, ExemplarAnnotation};
use crate::stats::{self, CutoffResult, GroupStats, Histogram, TTestResult};
use config::resolve;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("loading profiles: {0}")]
    Corpus(#[from] corpus::CorpusError),
    #[error("building lexicon: {0}")]
    Lexicon(#[from] LexiconError),
    #[error("creating backend: {0}")]
    Backend(ClientError),
    #[error("profile {profile}, {stage}: {source}")]
    Profile {
        profile: String,
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("no valid profiles to audit")]
    NoProfiles,
    #[error("no usable exemplars in {0}")]
    NoExemplars(PathBuf),
    #[error("config has no [dataset] section")]
    NoDataset,
    #[error("building dataset: {0}")]
    Dataset(#[from] finetune::FinetuneError),
    #[error("reading report {path}: {message}")]
    Report { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AuditError + '_ {
    move |source| AuditError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Runtime context that is not part of the config.
#[derive(Clone)]
pub struct RunEnv {
    /// Anchor for relative config paths.
    pub base_dir: PathBuf,
    pub execution: Execution,
    /// HTTP transport for the live backend; a real client when unset.
    pub transport: Option<Arc<dyn Transport>>,
}

impl RunEnv {
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        Self {
            base_dir: base_dir.into(),
            execution: Execution::default(),
            transport: None,
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn with_transport(mut self, transport: Arc<dyn Transport>) -> Self {
        self.transport = Some(transport);
        self
    }

    fn path(&self, p: &Path) -> PathBuf {
        resolve(&self.base_dir, p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSection {
    /// Absent for a gender with no values.
    pub per_gender: BTreeMap<Gender, Option<GroupStats>>,
    /// Absent when either gender has fewer than two values.
    pub t_test: Option<TTestResult>,
    pub histograms: BTreeMap<Gender, Histogram>,
}

impl MetricSection {
    pub fn statistics_block(&self) -> String {
        let get = |g| self.per_gender.get(&g).and_then(Option::as_ref);
        stats::statistics_block(get(Gender::Male), get(Gender::Female), self.t_test.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub seed: u64,
    pub backend: BackendKind,
    pub model: String,
    pub job: String,
    pub iterations_configured: usize,
    pub iterations_effective: usize,
    pub cutoff: f64,
    pub variance: stats::Variance,
    pub tool_version: String,
    /// Unix seconds; live runs only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub id: String,
    pub gender: Gender,
    pub in_role: bool,
    /// Mean of the parsed iteration scores; absent when none parsed.
    pub rank_score: Option<f64>,
    pub iteration_scores: Vec<Option<f64>>,
    pub bias_score: f64,
    pub per_iteration_terms: Vec<f64>,
    pub n_a_total: usize,
    pub n_b_total: usize,
    pub match_count: usize,
    pub degenerate_iterations: usize,
    pub retries: usize,
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub matches: Vec<TokenMatch>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tallies {
    pub profiles_read: usize,
    pub line_errors: usize,
    pub invalid_profiles: usize,
    pub profiles_audited: usize,
    pub completions: usize,
    pub retried_iterations: usize,
    pub unparsed_iterations: usize,
    pub unranked_profiles: usize,
    pub degenerate_iterations: usize,
    pub clamped_scores: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub metadata: RunMetadata,
    pub content_bias: MetricSection,
    pub ranking_bias: MetricSection,
    pub cutoff: CutoffResult,
    pub tallies: Tallies,
    pub warnings: Vec<String>,
    pub profiles: Vec<ProfileRow>,
}

impl AuditReport {
    pub fn has_warnings(&self) -> bool {
        !self.warnings.is_empty()
    }
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn build_lexicon(options: &LexiconOptions, env: &RunEnv) -> Result<Lexicon, AuditError> {
    let sources = if options.sources.is_empty() {
        bundled_sources()
    } else {
        options
            .sources
            .iter()
            .map(|p| SourceList::read(&env.path(p)))
            .collect::<Result<_, _>>()?
    };
    Ok(Lexicon::build(&sources, &options.lexicon_config())?)
}

/// The completion backend a config asks for, optionally recording.
pub fn build_backend(cfg: &AuditConfig, lexicon: &Lexicon, env: &RunEnv) -> Result<Arc<dyn CompletionBackend>, AuditError> {
    let inner: Arc<dyn CompletionBackend> = match cfg.backend {
        BackendKind::Replay => return Ok(Arc::new(ReplayBackend::new(env.path(&cfg.fixtures)))),
        BackendKind::Simulate => {
            let mut sim = cfg.simulator.clone();
            sim.injection.seed = cfg.seed;
            Arc::new(SimulatedBackend::new(sim, lexicon).map_err(AuditError::Backend)?)
        }
        BackendKind::Live => {
            let mut http = HttpConfig::from_env(&cfg.live.base_url, &cfg.live.api_key_env).map_err(AuditError::Backend)?;
            http.requests_per_minute = cfg.live.requests_per_minute;
            http.retry = RetryPolicy {
                max_retries: cfg.live.max_retries,
                ..RetryPolicy::default()
            };
            let transport = env
                .transport
                .clone()
                .unwrap_or_else(|| Arc::new(UreqTransport::new(Duration::from_secs(cfg.live.timeout_secs))));
            Arc::new(HttpBackend::new(http, transport))
        }
    };
    if cfg.record {
        Ok(Arc::new(RecordingBackend::new(inner, env.path(&cfg.fixtures))))
    } else {
        Ok(inner)
    }
}

/// Valid profiles ready to audit, with their ids.
struct Loaded {
    profiles: Vec<(String, Profile)>,
    tallies: Tallies,
    warnings: Vec<String>,
}

fn load_inputs(cfg: &AuditConfig, env: &RunEnv) -> Result<Loaded, AuditError> {
    let path = env.path(&cfg.profiles);
    let file = fs::File::open(&path).map_err(io_err(&path))?;
    let outcome = corpus::load_profiles(BufReader::new(file))?;
    let mut warnings = Vec::new();
    let mut tallies = Tallies {
        profiles_read: outcome.profiles.len() + outcome.errors.len(),
        line_errors: outcome.errors.len(),
        ..Default::default()
    };
    for e in &outcome.errors {
        warnings.push(format!("{}: line {}: {}", cfg.profiles.display(), e.line, e.reason));
    }

    let required = match &cfg.required_fields {
        Some(names) => corpus::parse_required(names)?,
        None => corpus::default_required(),
    };
    let mut valid = Vec::new();
    for (i, p) in outcome.profiles.into_iter().enumerate() {
        let id = p.id.clone().unwrap_or_else(|| i.to_string());
        match corpus::validate_profile(&p, &required) {
            Verdict::Ok => valid.push((id, p)),
            Verdict::Missing(fields) => {
                tallies.invalid_profiles += 1;
                let names: Vec<&str> = fields.iter().map(|f| f.as_str()).collect();
                warnings.push(format!("profile {id} skipped: missing {}", names.join(", ")));
            }
        }
    }

    if let Some(spec) = cfg.sample_spec() {
        let pool: Vec<Profile> = valid.iter().map(|(_, p)| p.clone()).collect();
        let picked = corpus::sample_balanced(&pool, &spec)?;
        // Map sampled profiles back to their ids; duplicates resolve in order.
        let mut by_value: Vec<Option<(String, Profile)>> = valid.into_iter().map(Some).collect();
        valid = picked
            .into_iter()
            .map(|p| {
                let slot = by_value
                    .iter_mut()
                    .find(|s| s.as_ref().is_some_and(|(_, q)| *q == p))
                    .expect("sampled profile comes from the pool");
                slot.take().expect("slot is filled")
            })
            .collect();
    }
    if valid.is_empty() {
        return Err(AuditError::NoProfiles);
    }
    Ok(Loaded {
        profiles: valid,
        tallies,
        warnings,
    })
}

pub fn load_exemplars(path: &Path, job: &str) -> Result<Vec<ExemplarAnnotation>, AuditError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let (exemplars, errors) = prompting::load_annotations(BufReader::new(file), job).map_err(io_err(path))?;
    if let Some(e) = errors.first() {
        return Err(AuditError::Config {
            path: path.to_path_buf(),
            message: format!("line {}: {}", e.line, e.reason),
        });
    }
    if exemplars.is_empty() {
        return Err(AuditError::NoExemplars(path.to_path_buf()));
    }
    Ok(exemplars)
}

struct ProfileOutcome {
    row: ProfileRow,
    retried: usize,
    unparsed: usize,
    clamped: usize,
    degenerate: usize,
    completions: usize,
}

fn profile_error(id: &str, stage: &'static str, e: impl std::error::Error + Send + Sync + 'static) -> AuditError {
    AuditError::Profile {
        profile: id.to_string(),
        stage,
        source: Box::new(e),
    }
}

fn audit_profile(
    cfg: &AuditConfig,
    ctx: &Context<'_>,
    id: &str,
    profile: &Profile,
) -> Result<ProfileOutcome, AuditError> {
    let prompt = build_prompt(ctx.exemplars, profile, &cfg.job).map_err(|e| profile_error(id, "prompt", e))?;
    let iterations = cfg.effective_iterations();
    let mut completions: Vec<Completion> = Vec::with_capacity(iterations);
    let mut scores = Vec::with_capacity(iterations);
    let (mut retried, mut unparsed, mut clamped, mut requests) = (0, 0, 0, 0);
    for i in 0..iterations {
        let mut attempt = 0u32;
        loop {
            let sample = (i + iterations * attempt as usize) as u32;
            let request = CompletionRequest::new(prompt.clone(), cfg.completion.clone()).with_sample(sample);
            let completion = ctx
                .backend
                .complete(&request)
                .map_err(|e| profile_error(id, "completion", e))?;
            requests += 1;
            match parse_response(&completion.text, &cfg.job) {
                Ok(parsed) => {
                    clamped += usize::from(parsed.clamped);
                    scores.push(Some(parsed.score));
                    completions.push(completion);
                    break;
                }
                Err(e) if attempt >= cfg.parse_retries => {
                    log::warn!("profile {id} iteration {i}: {e}");
                    unparsed += 1;
                    scores.push(None);
                    completions.push(completion);
                    break;
                }
                Err(_) => {
                    attempt += 1;
                    if attempt == 1 {
                        retried += 1;
                    }
                }
            }
        }
    }

    let bias = score_profile(&completions, ctx.lexicon, &cfg.job, &cfg.cleaning, &ctx.scoring)
        .map_err(|e| profile_error(id, "content scoring", e))?;
    let parsed: Vec<f64> = scores.iter().flatten().copied().collect();
    let rank_score = (!parsed.is_empty()).then(|| parsed.iter().sum::<f64>() / parsed.len() as f64);

    let mut flags = Vec::new();
    if rank_score.is_none() {
        flags.push("unranked".to_string());
    }
    if unparsed > 0 {
        flags.push("unparsed".into());
    }
    if retried > 0 {
        flags.push("retried".into());
    }
    if clamped > 0 {
        flags.push("clamped".into());
    }
    if bias.degenerate_iterations > 0 {
        flags.push("degenerate".into());
    }
    let degenerate = bias.degenerate_iterations;
    Ok(ProfileOutcome {
        row: ProfileRow {
            id: id.to_string(),
            gender: profile.gender,
            in_role: ctx.in_role(profile),
            rank_score,
            iteration_scores: scores,
            bias_score: bias.s,
            per_iteration_terms: bias.per_iteration_terms,
            n_a_total: bias.n_a_total,
            n_b_total: bias.n_b_total,
            match_count: bias.matches.len(),
            degenerate_iterations: bias.degenerate_iterations,
            retries: retried,
            flags,
            matches: if cfg.include_matches { bias.matches } else { Vec::new() },
        },
        retried,
        unparsed,
        clamped,
        degenerate,
        completions: requests,
    })
}

struct Context<'a> {
    exemplars: &'a [ExemplarAnnotation],
    lexicon: &'a Lexicon,
    backend: &'a dyn CompletionBackend,
    scoring: crate::metrics::ScoringConfig,
    role_names: Vec<String>,
}

impl Context<'_> {
    fn in_role(&self, p: &Profile) -> bool {
        p.current_job
            .as_deref()
            .is_some_and(|j| self.role_names.iter().any(|r| r.eq_ignore_ascii_case(j.trim())))
    }
}

fn section(values: &BTreeMap<Gender, Vec<f64>>, edges: &[f64], variance: stats::Variance) -> MetricSection {
    let per_gender = Gender::ALL
        .iter()
        .map(|g| (*g, values.get(g).and_then(|v| stats::describe(v).ok())))
        .collect();
    let empty = Vec::new();
    let male = values.get(&Gender::Male).unwrap_or(&empty);
    let female = values.get(&Gender::Female).unwrap_or(&empty);
    let histograms = Gender::ALL
        .iter()
        .map(|g| {
            let v = values.get(g).unwrap_or(&empty);
            (*g, stats::histogram_normalized(v, edges).expect("edges are increasing"))
        })
        .collect();
    MetricSection {
        per_gender,
        t_test: stats::t_test_ind(male, female, variance).ok(),
        histograms,
    }
}

/// Run the audit pipeline. Deterministic for the replay and simulate
/// backends regardless of execution mode.
pub fn run_audit(cfg: &AuditConfig, env: &RunEnv) -> Result<AuditReport, AuditError> {
    cfg.validate().map_err(AuditError::Invalid)?;
    let started_at = (cfg.backend == BackendKind::Live).then(now_unix);

    let Loaded {
        profiles,
        mut tallies,
        mut warnings,
    } = load_inputs(cfg, env)?;
    let exemplars = load_exemplars(&env.path(&cfg.exemplars), &cfg.job)?;
    let lexicon = build_lexicon(&cfg.lexicon, env)?;
    let backend = build_backend(cfg, &lexicon, env)?;

    let ctx = Context {
        exemplars: &exemplars,
        lexicon: &lexicon,
        backend: backend.as_ref(),
        scoring: crate::metrics::ScoringConfig {
            k: cfg.completion.top_k_logprobs as usize,
            ..cfg.scoring
        },
        role_names: std::iter::once(cfg.job.trim().to_string())
            .chain(cfg.sample.iter().flat_map(|s| s.role_synonyms.iter().map(|r| r.trim().to_string())))
            .collect(),
    };
    let threads = (cfg.backend == BackendKind::Live).then_some(cfg.live.concurrency);
    let outcomes = par::map(env.execution, threads, &profiles, |(id, p)| audit_profile(cfg, &ctx, id, p));

    let mut rows = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        let o = outcome?;
        tallies.retried_iterations += o.retried;
        tallies.unparsed_iterations += o.unparsed;
        tallies.clamped_scores += o.clamped;
        tallies.degenerate_iterations += o.degenerate;
        tallies.completions += o.completions;
        rows.push(o.row);
    }
    tallies.profiles_audited = rows.len();
    tallies.unranked_profiles = rows.iter().filter(|r| r.rank_score.is_none()).count();

    if tallies.unparsed_iterations > 0 {
        warnings.push(format!(
            "{} iterations had no parseable score after {} retries; {} profiles have no rank score",
            tallies.unparsed_iterations, cfg.parse_retries, tallies.unranked_profiles
        ));
    }
    if tallies.clamped_scores > 0 {
        warnings.push(format!("{} scores fell outside [0, 10] and were clamped", tallies.clamped_scores));
    }

    let mut content: BTreeMap<Gender, Vec<f64>> = BTreeMap::new();
    let mut ranking: BTreeMap<Gender, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        content.entry(r.gender).or_default().push(r.bias_score);
        if let Some(s) = r.rank_score {
            ranking.entry(r.gender).or_default().push(s);
        }
    }
    let iterations = cfg.effective_iterations();
    let content_bias = section(&content, &stats::equal_edges(0.0, iterations as f64, cfg.histogram_bins), cfg.variance);
    let ranking_bias = section(&ranking, &stats::equal_edges(0.0, 10.0, cfg.histogram_bins), cfg.variance);
    for (name, s) in [("content bias", &content_bias), ("ranking bias", &ranking_bias)] {
        if s.t_test.is_none() {
            warnings.push(format!("{name}: t-test needs at least two values per gender"));
        }
    }
    let cutoff = stats::cutoff_analysis(&ranking, cfg.cutoff).map_err(|e| AuditError::Invalid(e.to_string()))?;

    Ok(AuditReport {
        metadata: RunMetadata {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            backend: cfg.backend,
            model: cfg.completion.model.clone(),
            job: cfg.job.clone(),
            iterations_configured: cfg.iterations,
            iterations_effective: iterations,
            cutoff: cfg.cutoff,
            variance: cfg.variance,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at,
            finished_at: started_at.map(|_| now_unix()),
        },
        content_bias,
        ranking_bias,
        cutoff,
        tallies,
        warnings,
        profiles: rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetOutcome {
    pub path: PathBuf,
    pub records: Vec<FinetuneRecord>,
    pub meta: DatasetMeta,
    pub sanity: SanityCheck,
}

/// Build and write the fine-tuning dataset described by the `[dataset]`
/// section.
pub fn build_dataset(cfg: &AuditConfig, env: &RunEnv) -> Result<DatasetOutcome, AuditError> {
    let opts = cfg.dataset.as_ref().ok_or(AuditError::NoDataset)?;
    let annotations = load_exemplars(&env.path(&opts.annotations), &cfg.job)?;
    let va = match &opts.va_statements {
        Some(p) => {
            let path = env.path(p);
            let file = fs::File::open(&path).map_err(io_err(&path))?;
            finetune::load_va_statements(BufReader::new(file))?
        }
        None => finetune::bundled_va_statements(),
    };
    let icfg = InterleaveConfig {
        duplication_factor: opts.duplication_factor,
        va_ratio: opts.va_ratio,
        seed: cfg.seed,
    };
    let format = RecordFormat {
        leading_space: opts.leading_space,
    };
    let (records, meta) = finetune::build_dataset(&annotations, &va, &icfg, format)?;
    let path = env.path(&opts.output);
    finetune::emit_dataset(&records, &meta, &path)?;
    let sanity = finetune::sanity_check(&annotations, &cfg.job);
    Ok(DatasetOutcome {
        path,
        records,
        meta,
        sanity,
    })
}
