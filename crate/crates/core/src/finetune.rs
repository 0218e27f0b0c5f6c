//! Fine-tuning datasets: duplicated annotation records with value-added
//! question/answer pairs mixed in at a fixed ratio.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{mask_job, LineError};
use crate::prompting::{format_score, render_profile_block, score_cue, ExemplarAnnotation, REASONING_MARKER, TERMINATOR};

pub const DEFAULT_VA_RATIO: f64 = 0.10;
pub const DEFAULT_EPOCHS: u32 = 2;

#[derive(Debug, Error)]
pub enum FinetuneError {
    #[error("no annotations to build records from")]
    NoAnnotations,
    #[error("duplication factor must be at least 1")]
    BadFactor,
    #[error("va_ratio {0} outside [0, 1)")]
    BadRatio(f64),
    #[error("va_ratio is positive but no value-added statements were given")]
    NoStatements,
    #[error("invalid value-added statement on line {line}: {reason}")]
    BadStatement { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VAStatement {
    pub question: String,
    pub answer: String,
}

impl VAStatement {
    pub fn new(question: impl Into<String>, answer: impl Into<String>) -> Result<Self, String> {
        let (question, answer) = (question.into(), answer.into());
        if question.trim().is_empty() || answer.trim().is_empty() {
            return Err("question and answer must both be non-empty".into());
        }
        Ok(Self { question, answer })
    }
}

/// Read line-delimited `{"question", "answer"}` objects.
pub fn load_va_statements<R: BufRead>(reader: R) -> Result<Vec<VAStatement>, FinetuneError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| FinetuneError::Io {
            path: PathBuf::from("<statements>"),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| FinetuneError::BadStatement { line: i + 1, reason };
        let raw: VAStatement = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        out.push(VAStatement::new(raw.question, raw.answer).map_err(bad)?);
    }
    Ok(out)
}

/// The ten statements shipped with the crate.
pub fn bundled_va_statements() -> Vec<VAStatement> {
    load_va_statements(include_str!("../data/va_statements.jsonl").as_bytes()).expect("bundled statements parse")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Annotation,
    Va,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub prompt: String,
    pub completion: String,
    pub kind: RecordKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecordFormat {
    /// Prefix every completion with one space.
    pub leading_space: bool,
}

impl Default for RecordFormat {
    fn default() -> Self {
        Self { leading_space: true }
    }
}

impl RecordFormat {
    fn completion(&self, body: &str) -> String {
        if self.leading_space {
            format!(" {body}")
        } else {
            body.to_string()
        }
    }
}

/// One record per annotation per duplicate. Prompts are the job-masked
/// profile block ending at the score cue.
pub fn build_records(
    annotations: &[ExemplarAnnotation],
    duplication_factor: usize,
    format: RecordFormat,
) -> Result<Vec<FinetuneRecord>, FinetuneError> {
    if annotations.is_empty() {
        return Err(FinetuneError::NoAnnotations);
    }
    if duplication_factor == 0 {
        return Err(FinetuneError::BadFactor);
    }
    let unique: Vec<FinetuneRecord> = annotations
        .iter()
        .map(|a| FinetuneRecord {
            prompt: format!(
                "{}\n{}",
                render_profile_block(&mask_job(&a.profile), &a.job, None),
                score_cue(&a.job)
            ),
            completion: format.completion(&format!(
                "{} out of 10\n{REASONING_MARKER} {}{TERMINATOR}",
                format_score(a.score),
                a.reasoning
            )),
            kind: RecordKind::Annotation,
        })
        .collect();
    Ok((0..duplication_factor).flat_map(|_| unique.iter().cloned()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterleaveConfig {
    pub duplication_factor: usize,
    pub va_ratio: f64,
    pub seed: u64,
}

impl Default for InterleaveConfig {
    fn default() -> Self {
        Self {
            duplication_factor: 1,
            va_ratio: DEFAULT_VA_RATIO,
            seed: 0,
        }
    }
}

/// Number of VA records that makes them `ratio` of the final dataset.
pub fn va_count(records: usize, ratio: f64) -> usize {
    (ratio / (1.0 - ratio) * records as f64).round() as usize
}

/// Insert VA records at seeded random positions. Statements are reused
/// cyclically when more are needed than given; annotation records keep
/// their relative order.
pub fn interleave_va(
    records: &[FinetuneRecord],
    va: &[VAStatement],
    cfg: &InterleaveConfig,
    format: RecordFormat,
) -> Result<Vec<FinetuneRecord>, FinetuneError> {
    if !(0.0..1.0).contains(&cfg.va_ratio) {
        return Err(FinetuneError::BadRatio(cfg.va_ratio));
    }
    if cfg.va_ratio > 0.0 && va.is_empty() {
        return Err(FinetuneError::NoStatements);
    }
    let v = va_count(records.len(), cfg.va_ratio);
    if v == 0 {
        return Ok(records.to_vec());
    }
    let total = records.len() + v;
    let mut slots: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    slots.shuffle(&mut rng);
    let mut is_va = vec![false; total];
    for &s in &slots[..v] {
        is_va[s] = true;
    }

    let mut annotations = records.iter();
    let mut next_va = 0;
    let out = is_va
        .into_iter()
        .map(|va_slot| {
            if va_slot {
                let s = &va[next_va % va.len()];
                next_va += 1;
                FinetuneRecord {
                    prompt: s.question.clone(),
                    completion: format.completion(&s.answer),
                    kind: RecordKind::Va,
                }
            } else {
                annotations.next().expect("slot count matches records").clone()
            }
        })
        .collect();
    Ok(out)
}

/// Sidecar written next to a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub records: usize,
    pub annotation_records: usize,
    pub va_records: usize,
    pub duplication_factor: usize,
    pub va_ratio: f64,
    pub seed: u64,
    pub epochs: u32,
    /// Zero-based line numbers of VA records.
    pub va_lines: Vec<usize>,
}

impl DatasetMeta {
    pub fn describe(records: &[FinetuneRecord], cfg: &InterleaveConfig) -> Self {
        let va_lines: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.kind == RecordKind::Va)
            .map(|(i, _)| i)
            .collect();
        Self {
            records: records.len(),
            annotation_records: records.len() - va_lines.len(),
            va_records: va_lines.len(),
            duplication_factor: cfg.duplication_factor,
            va_ratio: cfg.va_ratio,
            seed: cfg.seed,
            epochs: DEFAULT_EPOCHS,
            va_lines,
        }
    }
}

pub fn meta_path(dataset: &Path) -> PathBuf {
    let mut name = dataset.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    dataset.with_file_name(name)
}

#[derive(Serialize, Deserialize)]
struct Line<'a> {
    prompt: std::borrow::Cow<'a, str>,
    completion: std::borrow::Cow<'a, str>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FinetuneError + '_ {
    move |source| FinetuneError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write one `{"prompt", "completion"}` object per line plus the sidecar.
pub fn emit_dataset(records: &[FinetuneRecord], meta: &DatasetMeta, destination: &Path) -> Result<(), FinetuneError> {
    if let Some(dir) = destination.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = fs::File::create(destination).map_err(io_err(destination))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = Line {
            prompt: r.prompt.as_str().into(),
            completion: r.completion.as_str().into(),
        };
        serde_json::to_writer(&mut w, &line).expect("strings serialize");
        w.write_all(b"\n").map_err(io_err(destination))?;
    }
    w.flush().map_err(io_err(destination))?;
    let meta_file = meta_path(destination);
    let json = serde_json::to_string_pretty(meta).expect("meta serializes");
    fs::write(&meta_file, json + "\n").map_err(io_err(&meta_file))
}

/// Read a dataset back. Record kinds come from the sidecar when present,
/// otherwise every record is taken as an annotation.
pub fn load_dataset(path: &Path) -> Result<(Vec<FinetuneRecord>, Option<DatasetMeta>), FinetuneError> {
    let meta_file = meta_path(path);
    let meta: Option<DatasetMeta> = match fs::read(&meta_file) {
        Ok(bytes) => Some(serde_json::from_slice(&bytes).map_err(|e| FinetuneError::Parse {
            path: meta_file.clone(),
            line: 0,
            reason: e.to_string(),
        })?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(io_err(&meta_file)(e)),
    };
    let va_lines: std::collections::HashSet<usize> =
        meta.iter().flat_map(|m| m.va_lines.iter().copied()).collect();
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let parsed: Line = serde_json::from_str(&line).map_err(|e| FinetuneError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        records.push(FinetuneRecord {
            prompt: parsed.prompt.into_owned(),
            completion: parsed.completion.into_owned(),
            kind: if va_lines.contains(&i) { RecordKind::Va } else { RecordKind::Annotation },
        });
    }
    Ok((records, meta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityCheck {
    pub in_role_mean: Option<f64>,
    pub out_of_role_mean: Option<f64>,
    /// In-role annotations score higher on average.
    pub holds: bool,
}

/// Compare mean annotated scores of in-role and out-of-role profiles. Warns
/// when in-role profiles do not score higher.
pub fn sanity_check(annotations: &[ExemplarAnnotation], role: &str) -> SanityCheck {
    let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let (inside, outside): (Vec<&ExemplarAnnotation>, Vec<&ExemplarAnnotation>) = annotations
        .iter()
        .partition(|a| a.profile.current_job.as_deref().is_some_and(|j| j.trim().eq_ignore_ascii_case(role.trim())));
    let in_role_mean = mean(&inside.iter().map(|a| a.score).collect::<Vec<_>>());
    let out_of_role_mean = mean(&outside.iter().map(|a| a.score).collect::<Vec<_>>());
    let holds = matches!((in_role_mean, out_of_role_mean), (Some(i), Some(o)) if i > o);
    if !holds {
        log::warn!(
            "annotated in-role mean {in_role_mean:?} does not exceed out-of-role mean {out_of_role_mean:?} for {role:?}"
        );
    }
    SanityCheck {
        in_role_mean,
        out_of_role_mean,
        holds,
    }
}

/// Duplicate, interleave and describe in one step.
pub fn build_dataset(
    annotations: &[ExemplarAnnotation],
    va: &[VAStatement],
    cfg: &InterleaveConfig,
    format: RecordFormat,
) -> Result<(Vec<FinetuneRecord>, DatasetMeta), FinetuneError> {
    let records = build_records(annotations, cfg.duplication_factor, format)?;
    let mixed = interleave_va(&records, va, cfg, format)?;
    let meta = DatasetMeta::describe(&mixed, cfg);
    Ok((mixed, meta))
}

/// Annotation file loading with line errors turned into one error.
pub fn load_annotation_file(path: &Path, job: &str) -> Result<(Vec<ExemplarAnnotation>, Vec<LineError>), FinetuneError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    crate::prompting::load_annotations(BufReader::new(file), job).map_err(io_err(path))
}
