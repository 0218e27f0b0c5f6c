//! Seeded stand-in for a completions model with injectable gender bias.
//!
//! The simulator reads the candidate's gender from the prompt, draws a
//! competence score shifted per gender, and writes a reasoning whose words
//! come from the lexicon with a per-gender probability. Every token carries
//! a log-probability and a runner-up list, so the full audit pipeline can be
//! checked against a known ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ClientError, Completion, CompletionBackend, CompletionRequest, TokenObservation};
use crate::corpus::Gender;
use crate::lexicon::Lexicon;
use crate::prompting::TERMINATOR;

/// A value for each gender.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerGender<T> {
    pub male: T,
    pub female: T,
}

impl<T: Copy> PerGender<T> {
    pub fn both(v: T) -> Self {
        Self { male: v, female: v }
    }

    pub fn get(&self, g: Gender) -> T {
        match g {
            Gender::Male => self.male,
            Gender::Female => self.female,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasInjection {
    #[serde(default = "zero_shift")]
    pub score_shift_by_gender: PerGender<f64>,
    #[serde(default)]
    pub score_noise_sd: f64,
    #[serde(default = "zero_shift")]
    pub biased_token_rate_by_gender: PerGender<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn zero_shift() -> PerGender<f64> {
    PerGender::both(0.0)
}

impl BiasInjection {
    /// Identical treatment of both genders.
    pub fn neutral(noise_sd: f64, token_rate: f64, seed: u64) -> Self {
        Self {
            score_shift_by_gender: PerGender::both(0.0),
            score_noise_sd: noise_sd,
            biased_token_rate_by_gender: PerGender::both(token_rate),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        let rates = self.biased_token_rate_by_gender;
        for g in Gender::ALL {
            let r = rates.get(g);
            if !(0.0..=1.0).contains(&r) {
                return Err(ClientError::Simulation(format!("biased token rate for {g} is {r}, outside [0, 1]")));
            }
            if !self.score_shift_by_gender.get(g).is_finite() {
                return Err(ClientError::Simulation(format!("score shift for {g} is not finite")));
            }
        }
        if !(self.score_noise_sd >= 0.0 && self.score_noise_sd.is_finite()) {
            return Err(ClientError::Simulation(format!("noise sd {} is invalid", self.score_noise_sd)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatorConfig {
    /// Score before shifts and noise.
    pub base_score: f64,
    /// Added when the candidate's current job equals the scored job.
    pub in_role_bonus: f64,
    /// Words in each generated reasoning.
    pub reasoning_words: usize,
    pub injection: BiasInjection,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            base_score: 6.0,
            in_role_bonus: 0.0,
            reasoning_words: 24,
            injection: BiasInjection::neutral(1.0, 0.1, 0),
        }
    }
}

const NEUTRAL_WORDS: &[&str] = &[
    "the", "candidate", "has", "relevant", "background", "in", "with", "and", "a", "degree", "years",
    "of", "experience", "skills", "shows", "clear", "evidence", "planning", "subject", "knowledge",
    "would", "be", "fit", "for", "this", "role", "profile", "lists", "several", "certifications",
    "communication", "research", "projects", "university", "courses", "however", "lacks", "some",
    "direct", "could", "benefit", "from", "more", "practical", "exposure", "overall", "suitable",
    "record", "management", "organization", "presentation", "reports", "data", "analysis",
    "computer", "writing", "language", "history", "science", "music", "program", "schedule", "tasks",
    "results", "goals", "department", "company", "position", "field", "level", "training",
    "qualification", "time", "work", "current", "previous", "across", "both", "other", "recent",
    "areas", "materials", "methods", "tools", "software", "office", "budget", "events", "meetings",
    "public", "local", "national", "written", "technical", "basic", "specific", "general",
    "instruction", "lessons", "grades", "curriculum", "assessment", "policy", "sector",
];

const PUNCTUATION: &[&str] = &[",", ".", ";", ":"];

pub struct SimulatedBackend {
    config: SimulatorConfig,
    biased: Vec<String>,
    neutral: Vec<String>,
}

impl SimulatedBackend {
    /// Vocabulary is split against `lexicon`: biased words are lexicon
    /// surfaces that no job overlay excludes, neutral words match nothing.
    pub fn new(config: SimulatorConfig, lexicon: &Lexicon) -> Result<Self, ClientError> {
        config.injection.validate()?;
        let jobs: Vec<&String> = lexicon.job_exclusions().keys().collect();
        let biased: Vec<String> = lexicon
            .entries()
            .filter(|e| e.surface.chars().all(|c| c.is_ascii_alphabetic() || c == '-'))
            .filter(|e| {
                lexicon.unrestricted().is_biased(&e.surface).is_some()
                    && jobs.iter().all(|j| lexicon.is_biased(&e.surface, j).is_some())
            })
            .map(|e| e.surface.clone())
            .collect();
        let full = lexicon.unrestricted();
        let neutral: Vec<String> = NEUTRAL_WORDS
            .iter()
            .filter(|w| full.is_biased(w).is_none())
            .map(|w| w.to_string())
            .collect();
        if biased.is_empty() || neutral.len() < 2 {
            return Err(ClientError::Simulation(format!(
                "vocabulary too small: {} biased, {} neutral words",
                biased.len(),
                neutral.len()
            )));
        }
        Ok(Self {
            config,
            biased,
            neutral,
        })
    }

    pub fn config(&self) -> &SimulatorConfig {
        &self.config
    }

    fn rng_for(&self, request: &CompletionRequest) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.config.injection.seed.to_le_bytes());
        h.update(request.sample.to_le_bytes());
        h.update(request.prompt.as_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    fn pick_word(&self, rng: &mut ChaCha8Rng, rate: f64) -> &str {
        let pool = if rng.random_bool(rate) { &self.biased } else { &self.neutral };
        &pool[rng.random_range(0..pool.len())]
    }

    fn observe(&self, rng: &mut ChaCha8Rng, token: String, k: usize, rate: f64, confident: bool) -> TokenObservation {
        let p_chosen: f64 = if confident {
            rng.random_range(0.9..0.999)
        } else {
            rng.random_range(0.3..0.95)
        };
        let alt_mass = (1.0 - p_chosen) * rng.random_range(0.5..0.95);
        let mut weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        weights.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = weights.iter().sum();

        let chosen_word = token.trim().to_string();
        let mut alternates = Vec::with_capacity(k);
        for w in weights {
            let mut alt = self.pick_word(rng, rate);
            for _ in 0..8 {
                if alt != chosen_word && !alternates.iter().any(|(a, _): &(String, f64)| a.trim() == alt) {
                    break;
                }
                alt = self.pick_word(rng, rate);
            }
            if alt == chosen_word {
                continue;
            }
            alternates.push((format!(" {alt}"), (alt_mass * w / total).ln()));
        }
        TokenObservation {
            token,
            logprob: p_chosen.ln(),
            alternates,
        }
    }
}

fn last_line_value<'a>(prompt: &'a str, key: &str) -> Option<&'a str> {
    prompt
        .lines()
        .rev()
        .find_map(|l| l.strip_prefix(key))
        .map(str::trim)
}

fn cue_job(prompt: &str) -> Option<&str> {
    let last = prompt.trim_end().lines().last()?;
    last.strip_prefix("Competence as ")?.strip_suffix(':').map(str::trim)
}

impl CompletionBackend for SimulatedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ClientError> {
        request.params.validate()?;
        let gender: Gender = last_line_value(&request.prompt, "Gender:")
            .ok_or_else(|| ClientError::Simulation("prompt has no Gender line".into()))?
            .parse()
            .map_err(ClientError::Simulation)?;
        let job = cue_job(&request.prompt).unwrap_or("the role").to_string();
        let in_role = last_line_value(&request.prompt, "Current_Job:")
            .is_some_and(|j| j.eq_ignore_ascii_case(&job));

        let inj = &self.config.injection;
        let mut rng = self.rng_for(request);
        let noise = if inj.score_noise_sd > 0.0 {
            Normal::new(0.0, inj.score_noise_sd)
                .expect("validated sd")
                .sample(&mut rng)
        } else {
            0.0
        };
        let bonus = if in_role { self.config.in_role_bonus } else { 0.0 };
        let raw = self.config.base_score + bonus + inj.score_shift_by_gender.get(gender) + noise;
        let score = (raw.clamp(0.0, 10.0) * 10.0).round() / 10.0;

        let k = request.params.top_k_logprobs as usize;
        let rate = inj.biased_token_rate_by_gender.get(gender);
        let mut tokens = Vec::new();
        // The prompt ends on the score cue, so the reply starts at the score.
        let header = format!(" {score:.1} out of 10\nReasoning:");
        for t in tokenize(&header) {
            tokens.push(self.observe(&mut rng, t, k, 0.0, true));
        }
        for i in 0..self.config.reasoning_words {
            let word = self.pick_word(&mut rng, rate).to_string();
            tokens.push(self.observe(&mut rng, format!(" {word}"), k, rate, false));
            if i + 1 < self.config.reasoning_words && rng.random_bool(0.1) {
                let p = PUNCTUATION[rng.random_range(0..2)];
                tokens.push(self.observe(&mut rng, p.to_string(), k, rate, true));
            }
        }
        tokens.push(self.observe(&mut rng, ".".into(), k, rate, true));
        // Stop sequences are not echoed back.
        if !request.params.stop.iter().any(|s| s == TERMINATOR) {
            tokens.push(self.observe(&mut rng, TERMINATOR.into(), k, 0.0, true));
        }

        let text = tokens.iter().map(|t| t.token.as_str()).collect();
        Ok(Completion { text, tokens })
    }

    fn kind(&self) -> &'static str {
        "simulate"
    }
}

#[derive(PartialEq, Eq, Clone, Copy)]
enum CharClass {
    Word,
    Digit,
    Other,
}

fn class(c: char) -> CharClass {
    if c.is_alphabetic() || c == '\'' || c == '-' {
        CharClass::Word
    } else if c.is_ascii_digit() {
        CharClass::Digit
    } else {
        CharClass::Other
    }
}

/// Split text into tokens the way byte-pair vocabularies tend to: leading
/// spaces attach to the following word, digits and punctuation stand alone,
/// newlines are their own token. Concatenating the output gives the input.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let mut cur_class: Option<CharClass> = None;
    let flush = |cur: &mut String, cls: &mut Option<CharClass>, tokens: &mut Vec<String>| {
        if !cur.is_empty() {
            tokens.push(std::mem::take(cur));
        }
        *cls = None;
    };
    for c in text.chars() {
        if c == '\n' {
            flush(&mut cur, &mut cur_class, &mut tokens);
            tokens.push("\n".into());
            continue;
        }
        if c == ' ' {
            if cur_class.is_some() {
                flush(&mut cur, &mut cur_class, &mut tokens);
            }
            cur.push(c);
            continue;
        }
        let k = class(c);
        match cur_class {
            Some(prev) if prev == k && k != CharClass::Other => cur.push(c),
            _ => {
                if cur_class.is_some() {
                    flush(&mut cur, &mut cur_class, &mut tokens);
                }
                cur.push(c);
                cur_class = Some(k);
            }
        }
    }
    flush(&mut cur, &mut cur_class, &mut tokens);
    tokens
}
