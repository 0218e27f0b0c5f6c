//! Gendered-word lexicon.
//!
//! A single master lexicon is merged from several tagged source lists.
//! Entries are keyed by lemma; job-specific vocabulary is handled as an
//! exclusion overlay per job title rather than as separate lexicons.
//!
//! Gender tags are kept for bookkeeping only. Whether a token matches never
//! depends on the direction of the entry it matched.

mod lemma;

pub use lemma::{exception_table, lemmatize};

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::{Mutex, OnceLock};

use aho_corasick::AhoCorasick;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum lemma length for the substring rule. Shorter lemmas ("man")
/// would fire inside unrelated words ("manager").
pub const DEFAULT_MIN_SUBSTRING_LEN: usize = 4;

const BUNDLED: &[(&str, &str)] = &[
    ("bsri", include_str!("../../data/lexicon/bsri.txt")),
    ("gaucher2011", include_str!("../../data/lexicon/gaucher2011.txt")),
    (
        "hoffman_borders2001",
        include_str!("../../data/lexicon/hoffman_borders2001.txt"),
    ),
    ("lowe", include_str!("../../data/lexicon/lowe.txt")),
    (
        "adjectives_man",
        include_str!("../../data/lexicon/adjectives_man.txt"),
    ),
    (
        "adjectives_woman",
        include_str!("../../data/lexicon/adjectives_woman.txt"),
    ),
];

const DROP_WORDS: &str = include_str!("../../data/lexicon/drop_words.txt");

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("no source lists given")]
    NoSources,
    #[error("lexicon is empty after filtering")]
    Empty,
    #[error("{source_id}:{line}: unknown gender tag {tag:?} (expected m or f)")]
    BadTag {
        source_id: String,
        line: usize,
        tag: String,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing lexicon export: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenderTag {
    Male,
    Female,
    Unspecified,
}

impl fmt::Display for GenderTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GenderTag::Male => "male",
            GenderTag::Female => "female",
            GenderTag::Unspecified => "unspecified",
        })
    }
}

/// One word list from one provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceList {
    pub id: String,
    pub words: Vec<(String, Option<GenderTag>)>,
}

impl SourceList {
    /// Parse the line format: one word per line, optional `,m` / `,f`
    /// suffix, `#` starts a comment.
    pub fn parse(id: impl Into<String>, text: &str) -> Result<Self, LexiconError> {
        let id = id.into();
        let mut words = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (word, tag) = match line.rsplit_once(',') {
                Some((w, t)) => {
                    let tag = match t.trim().to_ascii_lowercase().as_str() {
                        "m" => GenderTag::Male,
                        "f" => GenderTag::Female,
                        other => {
                            return Err(LexiconError::BadTag {
                                source_id: id,
                                line: i + 1,
                                tag: other.to_string(),
                            })
                        }
                    };
                    (w.trim(), Some(tag))
                }
                None => (line, None),
            };
            if !word.is_empty() {
                words.push((word.to_lowercase(), tag));
            }
        }
        Ok(Self { id, words })
    }

    /// Read a source list from disk; the file stem becomes the identifier.
    pub fn read(path: &Path) -> Result<Self, LexiconError> {
        let text = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        Self::parse(id, &text)
    }
}

/// The six lists shipped with the crate.
pub fn bundled_sources() -> Vec<SourceList> {
    BUNDLED
        .iter()
        .map(|(id, text)| SourceList::parse(*id, text).expect("bundled list is well-formed"))
        .collect()
}

pub fn default_drop_words() -> BTreeSet<String> {
    DROP_WORDS
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn default_job_exclusions() -> BTreeMap<String, BTreeSet<String>> {
    let set = |words: &[&str]| words.iter().map(|w| w.to_string()).collect();
    BTreeMap::from([
        (
            "teacher".to_string(),
            set(&["education", "educational", "teach", "student", "school", "child", "learn"]),
        ),
        (
            "doctor".to_string(),
            set(&["medical", "patient", "care", "clinical", "health"]),
        ),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LexiconConfig {
    pub drop_words: BTreeSet<String>,
    pub job_exclusions: BTreeMap<String, BTreeSet<String>>,
    pub min_substring_len: usize,
}

impl Default for LexiconConfig {
    fn default() -> Self {
        Self {
            drop_words: default_drop_words(),
            job_exclusions: default_job_exclusions(),
            min_substring_len: DEFAULT_MIN_SUBSTRING_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub surface: String,
    pub lemma: String,
    pub gender_tag: GenderTag,
    pub sources: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconStats {
    pub total: usize,
    pub female_tagged: usize,
    pub male_tagged: usize,
    pub unspecified: usize,
}

impl LexiconStats {
    pub fn female_male_ratio(&self) -> f64 {
        self.female_tagged as f64 / self.male_tagged as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchRule {
    /// The token itself is a lexicon lemma.
    Exact,
    /// The token's lemma is a lexicon lemma.
    Lemma,
    /// A lexicon lemma occurs inside the token.
    Substring,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Match<'a> {
    pub entry: &'a LexiconEntry,
    pub rule: MatchRule,
}

/// `None` when the token is not biased.
pub type MatchResult<'a> = Option<Match<'a>>;

#[derive(Serialize, Deserialize)]
struct LexiconDocument {
    stats: LexiconStats,
    min_substring_len: usize,
    job_exclusions: BTreeMap<String, BTreeSet<String>>,
    entries: Vec<LexiconEntry>,
}

pub struct Lexicon {
    entries: BTreeMap<String, LexiconEntry>,
    job_exclusions: BTreeMap<String, BTreeSet<String>>,
    stats: LexiconStats,
    min_substring_len: usize,
    // Patterns are the lemmas of at least `min_substring_len` chars, in
    // the same order as `substring_lemmas`.
    automaton: AhoCorasick,
    substring_lemmas: Vec<String>,
}

impl fmt::Debug for Lexicon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Lexicon")
            .field("stats", &self.stats)
            .field("jobs", &self.job_exclusions.keys().collect::<Vec<_>>())
            .field("min_substring_len", &self.min_substring_len)
            .finish_non_exhaustive()
    }
}

impl PartialEq for Lexicon {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
            && self.job_exclusions == other.job_exclusions
            && self.stats == other.stats
            && self.min_substring_len == other.min_substring_len
    }
}

fn normalize_job(job: &str) -> String {
    job.trim().to_lowercase()
}

fn warn_unknown_job_once(job: &str) {
    static WARNED: OnceLock<Mutex<HashSet<String>>> = OnceLock::new();
    let mut warned = WARNED
        .get_or_init(Default::default)
        .lock()
        .unwrap_or_else(|e| e.into_inner());
    if warned.insert(job.to_string()) {
        log::warn!("no lexicon exclusions configured for job {job:?}; matching against the full lexicon");
    }
}

impl Lexicon {
    /// Merge source lists into one lexicon.
    ///
    /// Words are lowercased, lemmatized and deduplicated by lemma with
    /// their sources merged. A lemma tagged male by one source and female
    /// by another ends up unspecified. Drop words are removed whether they
    /// match the surface form or the lemma.
    pub fn build(sources: &[SourceList], config: &LexiconConfig) -> Result<Self, LexiconError> {
        if sources.is_empty() {
            return Err(LexiconError::NoSources);
        }
        let drop: HashSet<String> = config
            .drop_words
            .iter()
            .flat_map(|w| [w.trim().to_lowercase(), lemmatize(w)])
            .collect();

        struct Pending {
            surfaces: BTreeSet<String>,
            tags: BTreeSet<GenderTag>,
            sources: BTreeSet<String>,
        }
        let mut merged: BTreeMap<String, Pending> = BTreeMap::new();
        for list in sources {
            for (word, tag) in &list.words {
                let surface = word.trim().to_lowercase();
                if surface.is_empty() {
                    continue;
                }
                let lemma = lemmatize(&surface);
                if drop.contains(&surface) || drop.contains(&lemma) {
                    continue;
                }
                let slot = merged.entry(lemma).or_insert_with(|| Pending {
                    surfaces: BTreeSet::new(),
                    tags: BTreeSet::new(),
                    sources: BTreeSet::new(),
                });
                slot.surfaces.insert(surface);
                slot.sources.insert(list.id.clone());
                if let Some(t) = tag {
                    slot.tags.insert(*t);
                }
            }
        }

        let entries = merged
            .into_iter()
            .map(|(lemma, p)| {
                let gender_tag = match (
                    p.tags.contains(&GenderTag::Male),
                    p.tags.contains(&GenderTag::Female),
                ) {
                    (true, false) => GenderTag::Male,
                    (false, true) => GenderTag::Female,
                    _ => GenderTag::Unspecified,
                };
                let surface = p.surfaces.into_iter().next().unwrap_or_else(|| lemma.clone());
                let entry = LexiconEntry {
                    surface,
                    lemma: lemma.clone(),
                    gender_tag,
                    sources: p.sources,
                };
                (lemma, entry)
            })
            .collect();

        Self::assemble(entries, &config.job_exclusions, config.min_substring_len)
    }

    /// Rebuild a lexicon from exported entries.
    pub fn from_entries(
        entries: Vec<LexiconEntry>,
        job_exclusions: &BTreeMap<String, BTreeSet<String>>,
        min_substring_len: usize,
    ) -> Result<Self, LexiconError> {
        let map = entries
            .into_iter()
            .map(|mut e| {
                e.surface = e.surface.trim().to_lowercase();
                e.lemma = lemmatize(&e.lemma);
                (e.lemma.clone(), e)
            })
            .collect();
        Self::assemble(map, job_exclusions, min_substring_len)
    }

    fn assemble(
        entries: BTreeMap<String, LexiconEntry>,
        job_exclusions: &BTreeMap<String, BTreeSet<String>>,
        min_substring_len: usize,
    ) -> Result<Self, LexiconError> {
        if entries.is_empty() {
            return Err(LexiconError::Empty);
        }
        let mut stats = LexiconStats {
            total: entries.len(),
            ..Default::default()
        };
        for e in entries.values() {
            match e.gender_tag {
                GenderTag::Male => stats.male_tagged += 1,
                GenderTag::Female => stats.female_tagged += 1,
                GenderTag::Unspecified => stats.unspecified += 1,
            }
        }
        let job_exclusions = job_exclusions
            .iter()
            .map(|(job, words)| (normalize_job(job), words.iter().map(|w| lemmatize(w)).collect()))
            .collect();
        let substring_lemmas: Vec<String> = entries
            .keys()
            .filter(|l| l.chars().count() >= min_substring_len)
            .cloned()
            .collect();
        let automaton = AhoCorasick::new(&substring_lemmas).expect("lemma patterns are plain strings");
        Ok(Self {
            entries,
            job_exclusions,
            stats,
            min_substring_len,
            automaton,
            substring_lemmas,
        })
    }

    pub fn stats(&self) -> LexiconStats {
        self.stats
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn min_substring_len(&self) -> usize {
        self.min_substring_len
    }

    pub fn entries(&self) -> impl Iterator<Item = &LexiconEntry> {
        self.entries.values()
    }

    pub fn get(&self, lemma: &str) -> Option<&LexiconEntry> {
        self.entries.get(lemma)
    }

    pub fn job_exclusions(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.job_exclusions
    }

    /// Excluded lemmas for a job, `None` if the job has no overlay.
    pub fn exclusions_for(&self, job: &str) -> Option<&BTreeSet<String>> {
        self.job_exclusions.get(&normalize_job(job))
    }

    /// Entries in the flat export shape, ordered by lemma.
    pub fn export(&self) -> Vec<LexiconEntry> {
        self.entries.values().cloned().collect()
    }

    /// The whole lexicon as a JSON document that [`Lexicon::from_json`]
    /// reads back.
    pub fn to_json(&self) -> String {
        let doc = LexiconDocument {
            stats: self.stats,
            min_substring_len: self.min_substring_len,
            job_exclusions: self.job_exclusions.clone(),
            entries: self.export(),
        };
        serde_json::to_string_pretty(&doc).expect("lexicon serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, LexiconError> {
        let doc: LexiconDocument = serde_json::from_str(text)?;
        Self::from_entries(doc.entries, &doc.job_exclusions, doc.min_substring_len)
    }

    /// Resolve a job once and return a matcher bound to its exclusions.
    pub fn matcher(&self, job: &str) -> JobMatcher<'_> {
        let excluded = self.exclusions_for(job);
        if excluded.is_none() {
            warn_unknown_job_once(&normalize_job(job));
        }
        JobMatcher {
            lexicon: self,
            excluded,
        }
    }

    /// A matcher with no job exclusions.
    pub fn unrestricted(&self) -> JobMatcher<'_> {
        JobMatcher {
            lexicon: self,
            excluded: None,
        }
    }

    /// Check one cleaned token against the lexicon for the given job.
    pub fn is_biased(&self, token: &str, job: &str) -> MatchResult<'_> {
        self.matcher(job).is_biased(token)
    }
}

/// A lexicon view with one job's exclusions applied.
#[derive(Clone, Copy)]
pub struct JobMatcher<'a> {
    lexicon: &'a Lexicon,
    excluded: Option<&'a BTreeSet<String>>,
}

impl<'a> JobMatcher<'a> {
    fn allowed(&self, lemma: &str) -> bool {
        self.excluded.is_none_or(|ex| !ex.contains(lemma))
    }

    fn lookup(&self, key: &str) -> Option<&'a LexiconEntry> {
        self.lexicon.entries.get(key).filter(|_| self.allowed(key))
    }

    pub fn is_biased(&self, token: &str) -> MatchResult<'a> {
        let token = token.trim().to_lowercase();
        if token.is_empty() {
            return None;
        }
        if let Some(entry) = self.lookup(&token) {
            return Some(Match {
                entry,
                rule: MatchRule::Exact,
            });
        }
        let lemma = lemmatize(&token);
        if let Some(entry) = self.lookup(&lemma) {
            return Some(Match {
                entry,
                rule: MatchRule::Lemma,
            });
        }

        // Longest contained lemma wins; ties go to the smaller lemma.
        let mut best: Option<&'a str> = None;
        for hay in [token.as_str(), lemma.as_str()] {
            for m in self.lexicon.automaton.find_overlapping_iter(hay) {
                let cand = self.lexicon.substring_lemmas[m.pattern().as_usize()].as_str();
                if !self.allowed(cand) {
                    continue;
                }
                best = match best {
                    Some(b) if b.len() > cand.len() || (b.len() == cand.len() && b <= cand) => {
                        Some(b)
                    }
                    _ => Some(cand),
                };
            }
        }
        best.and_then(|l| self.lexicon.entries.get(l)).map(|entry| Match {
            entry,
            rule: MatchRule::Substring,
        })
    }
}
