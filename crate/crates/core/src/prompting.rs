//! Few-shot prompt rendering and completion parsing.
//!
//! Every profile renders to the same slotted line sequence, with absent
//! values written as `None`. Annotated blocks end with the score line, the
//! reasoning and a `||` terminator; the candidate block ends on the bare
//! score cue so the model continues with a score and its reasoning.

use std::fmt::Write as _;
use std::io::BufRead;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LineError, Profile, MAX_CERTIFICATIONS, MAX_EDUCATION};

pub const TERMINATOR: &str = "||";
pub const REASONING_MARKER: &str = "Reasoning:";
const NONE: &str = "None";
const BLOCK_SEPARATOR: &str = "\n\n";

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("a prompt needs at least one annotated exemplar")]
    NoExemplars,
    #[error("no score found in completion: {raw:?}")]
    NoScore { raw: String },
    #[error("completion scores job {found:?}, expected {expected:?}")]
    JobMismatch { expected: String, found: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarAnnotation {
    pub profile: Profile,
    pub job: String,
    pub score: f64,
    pub reasoning: String,
}

impl ExemplarAnnotation {
    pub fn new(profile: Profile, job: impl Into<String>, score: f64, reasoning: impl Into<String>) -> Result<Self, String> {
        let reasoning = reasoning.into();
        if !(0.0..=10.0).contains(&score) {
            return Err(format!("score {score} outside [0, 10]"));
        }
        if reasoning.trim().is_empty() {
            return Err("reasoning is empty".into());
        }
        Ok(Self {
            profile,
            job: job.into(),
            score,
            reasoning,
        })
    }
}

#[derive(Deserialize)]
struct AnnotatedLine {
    #[serde(flatten)]
    profile: Profile,
    score: f64,
    reasoning: String,
}

/// Read annotated exemplars: profile records with extra `score` and
/// `reasoning` keys. All are attached to `job`.
pub fn load_annotations<R: BufRead>(reader: R, job: &str) -> std::io::Result<(Vec<ExemplarAnnotation>, Vec<LineError>)> {
    let mut ok = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<AnnotatedLine>(&line)
            .map_err(|e| e.to_string())
            .and_then(|a| ExemplarAnnotation::new(a.profile, job, a.score, a.reasoning));
        match parsed {
            Ok(a) => ok.push(a),
            Err(reason) => errors.push(LineError { line: i + 1, reason }),
        }
    }
    Ok((ok, errors))
}

/// Format a score the way annotations write it: `8`, `3.5`, `7.25`.
pub fn format_score(score: f64) -> String {
    format!("{score}")
}

fn opt(v: &Option<String>) -> &str {
    match v.as_deref() {
        Some(s) if !s.trim().is_empty() => s,
        _ => NONE,
    }
}

fn list(v: &[String]) -> String {
    if v.iter().all(|s| s.trim().is_empty()) {
        NONE.to_string()
    } else {
        v.join(", ")
    }
}

/// The score cue that opens a competence line.
pub fn score_cue(job: &str) -> String {
    format!("Competence as {job}:")
}

/// Render one profile block. With an annotation, the block ends with the
/// score line and `Reasoning: ...||`; without one it ends after
/// `Current_Job:`.
pub fn render_profile_block(p: &Profile, job: &str, annotation: Option<(f64, &str)>) -> String {
    let mut out = String::new();
    // Writing to a String cannot fail.
    let _ = writeln!(out, "Name: {}", p.name);
    let _ = writeln!(out, "Gender: {}", p.gender.title());
    let _ = writeln!(out, "Industry: {}", opt(&p.industry));
    let _ = writeln!(out, "Current_Company: {}", opt(&p.current_company));
    let _ = writeln!(out, "Location: {}", opt(&p.country));
    let _ = writeln!(out, "Interests: {}", list(&p.interests));
    let _ = writeln!(out, "Skills: {}", list(&p.skills));
    let _ = writeln!(out, "Experience: {}", opt(&p.experience));
    for i in 0..MAX_EDUCATION {
        let _ = writeln!(out, "Education_{}: {}", i + 1, opt(&p.education.get(i).cloned()));
    }
    for i in 0..MAX_CERTIFICATIONS {
        let _ = writeln!(out, "Certifications_{}: {}", i + 1, opt(&p.certifications.get(i).cloned()));
    }
    let _ = write!(out, "Current_Job: {}", opt(&p.current_job));
    if let Some((score, reasoning)) = annotation {
        let _ = write!(
            out,
            "\n{} {} out of 10\n{REASONING_MARKER} {reasoning}{TERMINATOR}",
            score_cue(job),
            format_score(score)
        );
    }
    out
}

/// Assemble the few-shot prompt: annotated exemplar blocks, then the
/// candidate block closed by the score cue.
pub fn build_prompt(exemplars: &[ExemplarAnnotation], candidate: &Profile, job: &str) -> Result<String, PromptError> {
    if exemplars.is_empty() {
        return Err(PromptError::NoExemplars);
    }
    let mut blocks: Vec<String> = exemplars
        .iter()
        .map(|e| render_profile_block(&e.profile, job, Some((e.score, &e.reasoning))))
        .collect();
    blocks.push(format!("{}\n{}", render_profile_block(candidate, job, None), score_cue(job)));
    Ok(blocks.join(BLOCK_SEPARATOR))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub score: f64,
    pub reasoning: String,
    pub raw: String,
    /// The model's score fell outside [0, 10] and was clamped.
    #[serde(default)]
    pub clamped: bool,
}

fn cue_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)competence\s+as\s+(?:an?\s+)?([^:\n]*?)\s*:\s*(-?\d+(?:\.\d+)?)\s*(?:/\s*10\b|out\s+of\s+10\b)")
            .expect("static regex")
    })
}

fn bare_score_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)(-?\d+(?:\.\d+)?)\s*(?:/\s*10\b|out\s+of\s+10\b)").expect("static regex")
    })
}

fn normalize_job(job: &str) -> String {
    let j = job.trim().to_lowercase();
    j.strip_prefix("a ")
        .or_else(|| j.strip_prefix("an "))
        .map(str::to_string)
        .unwrap_or(j)
}

/// Extract score and reasoning from a completion.
///
/// Accepts `x/10` and `x out of 10` with integer or decimal `x`. The text
/// may be a full block (`Competence as Teacher: 8 out of 10 ...`) or just
/// the continuation after the cue (` 8 out of 10 ...`). A competence line
/// naming a different job is rejected.
pub fn parse_response(raw: &str, job: &str) -> Result<ParsedResponse, PromptError> {
    let marker = raw.find(REASONING_MARKER);
    let head = &raw[..marker.unwrap_or(raw.len())];

    let value = if let Some(c) = cue_regex().captures(head) {
        let found = c[1].trim().to_string();
        if normalize_job(&found) != normalize_job(job) {
            return Err(PromptError::JobMismatch {
                expected: job.to_string(),
                found,
            });
        }
        c[2].to_string()
    } else if let Some(c) = bare_score_regex().captures(head) {
        c[1].to_string()
    } else {
        return Err(PromptError::NoScore { raw: raw.to_string() });
    };
    let parsed: f64 = value
        .parse()
        .map_err(|_| PromptError::NoScore { raw: raw.to_string() })?;
    let score = parsed.clamp(0.0, 10.0);
    let clamped = score != parsed;
    if clamped {
        log::warn!("clamped out-of-range score {parsed} to {score}");
    }

    let reasoning = match marker {
        Some(i) => {
            let rest = &raw[i + REASONING_MARKER.len()..];
            rest.split(TERMINATOR).next().unwrap_or("").trim().to_string()
        }
        None => String::new(),
    };
    Ok(ParsedResponse {
        score,
        reasoning,
        raw: raw.to_string(),
        clamped,
    })
}
