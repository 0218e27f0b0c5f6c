use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::AuditError;
use crate::client::{CompletionParams, SimulatorConfig};
use crate::corpus::SampleSpec;
use crate::lexicon::{default_drop_words, default_job_exclusions, LexiconConfig, DEFAULT_MIN_SUBSTRING_LEN};
use crate::metrics::{CleaningConfig, ScoringConfig};
use crate::stats::Variance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Replay,
    Simulate,
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackendKind::Live => "live",
            BackendKind::Replay => "replay",
            BackendKind::Simulate => "simulate",
        })
    }
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "live" => Ok(BackendKind::Live),
            "replay" => Ok(BackendKind::Replay),
            "simulate" => Ok(BackendKind::Simulate),
            other => Err(format!("unknown backend {other:?} (expected live, replay or simulate)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Text,
    Svg,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 4] = [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Text, ReportFormat::Svg];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Text => "txt",
            ReportFormat::Svg => "svg",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "text" | "txt" => Ok(ReportFormat::Text),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiveOptions {
    pub base_url: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub requests_per_minute: u32,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Concurrent requests in flight.
    pub concurrency: usize,
}

impl Default for LiveOptions {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            requests_per_minute: 60,
            timeout_secs: 60,
            max_retries: 4,
            concurrency: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleOptions {
    pub in_role: usize,
    pub out_of_role: usize,
    #[serde(default = "one_to_one")]
    pub gender_ratio: (u32, u32),
    #[serde(default)]
    pub role_synonyms: Vec<String>,
}

fn one_to_one() -> (u32, u32) {
    (1, 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexiconOptions {
    /// Word-list files; the bundled lists when empty.
    pub sources: Vec<PathBuf>,
    /// Replaces the default drop list when set.
    pub drop_words: Option<BTreeSet<String>>,
    /// Replaces the default per-job exclusions when set.
    pub job_exclusions: Option<BTreeMap<String, BTreeSet<String>>>,
    pub min_substring_len: usize,
}

impl Default for LexiconOptions {
    fn default() -> Self {
        Self {
            sources: Vec::new(),
            drop_words: None,
            job_exclusions: None,
            min_substring_len: DEFAULT_MIN_SUBSTRING_LEN,
        }
    }
}

impl LexiconOptions {
    pub fn lexicon_config(&self) -> LexiconConfig {
        LexiconConfig {
            drop_words: self.drop_words.clone().unwrap_or_else(default_drop_words),
            job_exclusions: self.job_exclusions.clone().unwrap_or_else(default_job_exclusions),
            min_substring_len: self.min_substring_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetOptions {
    pub annotations: PathBuf,
    /// Bundled statements when absent.
    #[serde(default)]
    pub va_statements: Option<PathBuf>,
    #[serde(default = "default_duplication")]
    pub duplication_factor: usize,
    #[serde(default = "default_va_ratio")]
    pub va_ratio: f64,
    #[serde(default = "default_leading_space")]
    pub leading_space: bool,
    pub output: PathBuf,
}

fn default_duplication() -> usize {
    4
}

fn default_va_ratio() -> f64 {
    crate::finetune::DEFAULT_VA_RATIO
}

fn default_leading_space() -> bool {
    true
}

fn default_iterations() -> usize {
    10
}

fn default_cutoff() -> f64 {
    7.0
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("reports")
}

fn default_fixtures() -> PathBuf {
    PathBuf::from("fixtures")
}

fn default_formats() -> BTreeSet<ReportFormat> {
    ReportFormat::ALL.into_iter().collect()
}

fn default_retries() -> u32 {
    2
}

fn default_bins() -> usize {
    20
}

/// Everything one audit run depends on. Relative paths are resolved
/// against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub job: String,
    pub profiles: PathBuf,
    pub exemplars: PathBuf,
    pub backend: BackendKind,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: BTreeSet<ReportFormat>,
    /// Replay reads fixtures from here; `record` writes them here.
    #[serde(default = "default_fixtures")]
    pub fixtures: PathBuf,
    /// Save every completion to `fixtures` (live and simulate backends).
    #[serde(default)]
    pub record: bool,
    /// Profile fields that must be present; a default set when absent.
    #[serde(default)]
    pub required_fields: Option<Vec<String>>,
    /// Extra requests for a completion whose score cannot be parsed.
    #[serde(default = "default_retries")]
    pub parse_retries: u32,
    #[serde(default)]
    pub variance: Variance,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    /// Keep every matched token in the JSON report.
    #[serde(default)]
    pub include_matches: bool,
    #[serde(default)]
    pub sample: Option<SampleOptions>,
    #[serde(default)]
    pub lexicon: LexiconOptions,
    #[serde(default)]
    pub cleaning: CleaningConfig,
    #[serde(default)]
    pub scoring: ScoringConfig,
    #[serde(default)]
    pub completion: CompletionParams,
    #[serde(default)]
    pub live: LiveOptions,
    /// The run seed replaces `injection.seed`.
    #[serde(default)]
    pub simulator: SimulatorConfig,
    #[serde(default)]
    pub dataset: Option<DatasetOptions>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub backend: Option<BackendKind>,
    pub cutoff: Option<f64>,
}

impl AuditConfig {
    /// A minimal config with defaults for everything optional.
    pub fn new(job: impl Into<String>, profiles: impl Into<PathBuf>, exemplars: impl Into<PathBuf>, backend: BackendKind) -> Self {
        Self {
            job: job.into(),
            profiles: profiles.into(),
            exemplars: exemplars.into(),
            backend,
            iterations: default_iterations(),
            cutoff: default_cutoff(),
            seed: 0,
            output_dir: default_output_dir(),
            formats: default_formats(),
            fixtures: default_fixtures(),
            record: false,
            required_fields: None,
            parse_retries: default_retries(),
            variance: Variance::Pooled,
            histogram_bins: default_bins(),
            include_matches: false,
            sample: None,
            lexicon: LexiconOptions::default(),
            cleaning: CleaningConfig::default(),
            scoring: ScoringConfig::default(),
            completion: CompletionParams::default(),
            live: LiveOptions::default(),
            simulator: SimulatorConfig::default(),
            dataset: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Read a config file. Returns the config and the directory its
    /// relative paths are anchored to.
    pub fn load(path: &Path) -> Result<(Self, PathBuf), AuditError> {
        let text = fs::read_to_string(path).map_err(|source| AuditError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg = Self::from_toml(&text).map_err(|message| AuditError::Config {
            path: path.to_path_buf(),
            message,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(backend) = o.backend {
            self.backend = backend;
        }
        if let Some(cutoff) = o.cutoff {
            self.cutoff = cutoff;
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.job.trim().is_empty() {
            return Err("job must not be empty".into());
        }
        if self.iterations == 0 {
            return Err("iterations must be at least 1".into());
        }
        if !(0.0..=10.0).contains(&self.cutoff) {
            return Err(format!("cutoff {} outside [0, 10]", self.cutoff));
        }
        if self.histogram_bins == 0 {
            return Err("histogram_bins must be at least 1".into());
        }
        if self.record && self.backend == BackendKind::Replay {
            return Err("record cannot be combined with the replay backend".into());
        }
        self.completion.validate().map_err(|e| e.to_string())?;
        self.simulator.injection.validate().map_err(|e| e.to_string())?;
        if let Some(d) = &self.dataset {
            if d.duplication_factor == 0 {
                return Err("dataset.duplication_factor must be at least 1".into());
            }
            if !(0.0..1.0).contains(&d.va_ratio) {
                return Err(format!("dataset.va_ratio {} outside [0, 1)", d.va_ratio));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of the config.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical))
    }

    /// Completions per profile: one when sampling is greedy.
    pub fn effective_iterations(&self) -> usize {
        if self.completion.temperature == 0.0 {
            1
        } else {
            self.iterations
        }
    }

    pub fn sample_spec(&self) -> Option<SampleSpec> {
        self.sample.as_ref().map(|s| SampleSpec {
            in_role_count: s.in_role,
            out_of_role_count: s.out_of_role,
            role: self.job.clone(),
            role_synonyms: s.role_synonyms.clone(),
            gender_ratio: s.gender_ratio,
            seed: self.seed,
        })
    }
}

pub(crate) fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
