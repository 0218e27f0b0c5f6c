//! Applicant profiles: loading, validation, masking and balanced sampling.
//!
//! Profiles are read from line-delimited JSON, one flat object per line.
//! Absent keys and explicit `null` are interchangeable.

use std::collections::BTreeSet;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

pub const MAX_EDUCATION: usize = 3;
pub const MAX_CERTIFICATIONS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Male, Gender::Female];

    /// Capitalized form used in prompts and report blocks.
    pub fn title(self) -> &'static str {
        match self {
            Gender::Male => "Male",
            Gender::Female => "Female",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Male => "male",
            Gender::Female => "female",
        })
    }
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" => Ok(Gender::Male),
            "female" => Ok(Gender::Female),
            other => Err(format!("unsupported gender value {other:?}")),
        }
    }
}

impl<'de> Deserialize<'de> for Gender {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn null_as_empty<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
    Ok(Option::<Vec<String>>::deserialize(d)?.unwrap_or_default())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    /// Optional stable identifier; reports fall back to the load position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub name: String,
    pub gender: Gender,
    #[serde(default)]
    pub birth_year: Option<i32>,
    #[serde(default)]
    pub industry: Option<String>,
    #[serde(default)]
    pub current_company: Option<String>,
    #[serde(default)]
    pub current_job: Option<String>,
    #[serde(default)]
    pub country: Option<String>,
    #[serde(default, deserialize_with = "null_as_empty")]
    pub interests: Vec<String>,
    #[serde(default, deserialize_with = "null_as_empty")]
    pub skills: Vec<String>,
    #[serde(default)]
    pub experience: Option<String>,
    #[serde(default, deserialize_with = "null_as_empty")]
    pub education: Vec<String>,
    #[serde(default, deserialize_with = "null_as_empty")]
    pub certifications: Vec<String>,
}

impl Profile {
    pub fn new(name: impl Into<String>, gender: Gender) -> Self {
        Self {
            id: None,
            name: name.into(),
            gender,
            birth_year: None,
            industry: None,
            current_company: None,
            current_job: None,
            country: None,
            interests: Vec::new(),
            skills: Vec::new(),
            experience: None,
            education: Vec::new(),
            certifications: Vec::new(),
        }
    }

    fn check_shape(&self) -> Result<(), String> {
        if self.education.len() > MAX_EDUCATION {
            return Err(format!(
                "education has {} entries, at most {MAX_EDUCATION} allowed",
                self.education.len()
            ));
        }
        if self.certifications.len() > MAX_CERTIFICATIONS {
            return Err(format!(
                "certifications has {} entries, at most {MAX_CERTIFICATIONS} allowed",
                self.certifications.len()
            ));
        }
        Ok(())
    }

    fn is_field_empty(&self, field: ProfileField) -> bool {
        fn blank(s: &Option<String>) -> bool {
            s.as_deref().is_none_or(|v| v.trim().is_empty())
        }
        fn none_listed(v: &[String]) -> bool {
            v.iter().all(|s| s.trim().is_empty())
        }
        match field {
            ProfileField::Name => self.name.trim().is_empty(),
            ProfileField::Gender => false,
            ProfileField::BirthYear => self.birth_year.is_none(),
            ProfileField::Industry => blank(&self.industry),
            ProfileField::CurrentCompany => blank(&self.current_company),
            ProfileField::CurrentJob => blank(&self.current_job),
            ProfileField::Country => blank(&self.country),
            ProfileField::Interests => none_listed(&self.interests),
            ProfileField::Skills => none_listed(&self.skills),
            ProfileField::Experience => blank(&self.experience),
            ProfileField::Education => none_listed(&self.education),
            ProfileField::Certifications => none_listed(&self.certifications),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProfileField {
    Name,
    Gender,
    BirthYear,
    Industry,
    CurrentCompany,
    CurrentJob,
    Country,
    Interests,
    Skills,
    Experience,
    Education,
    Certifications,
}

impl ProfileField {
    pub const ALL: [ProfileField; 12] = [
        ProfileField::Name,
        ProfileField::Gender,
        ProfileField::BirthYear,
        ProfileField::Industry,
        ProfileField::CurrentCompany,
        ProfileField::CurrentJob,
        ProfileField::Country,
        ProfileField::Interests,
        ProfileField::Skills,
        ProfileField::Experience,
        ProfileField::Education,
        ProfileField::Certifications,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProfileField::Name => "name",
            ProfileField::Gender => "gender",
            ProfileField::BirthYear => "birth_year",
            ProfileField::Industry => "industry",
            ProfileField::CurrentCompany => "current_company",
            ProfileField::CurrentJob => "current_job",
            ProfileField::Country => "country",
            ProfileField::Interests => "interests",
            ProfileField::Skills => "skills",
            ProfileField::Experience => "experience",
            ProfileField::Education => "education",
            ProfileField::Certifications => "certifications",
        }
    }
}

impl fmt::Display for ProfileField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProfileField {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ProfileField::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| CorpusError::UnknownField(s.to_string()))
    }
}

/// Fields that must be present unless configured otherwise.
pub const DEFAULT_REQUIRED: [ProfileField; 6] = [
    ProfileField::Name,
    ProfileField::Gender,
    ProfileField::Industry,
    ProfileField::CurrentJob,
    ProfileField::Skills,
    ProfileField::Education,
];

pub fn default_required() -> BTreeSet<ProfileField> {
    DEFAULT_REQUIRED.into_iter().collect()
}

/// Parse a configured list of field names.
pub fn parse_required<S: AsRef<str>>(names: &[S]) -> Result<BTreeSet<ProfileField>, CorpusError> {
    names.iter().map(|n| n.as_ref().trim().parse()).collect()
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("unknown profile field {0:?}")]
    UnknownField(String),
    #[error("reading profiles: {0}")]
    Io(#[from] std::io::Error),
    #[error("stratum {stratum} needs {needed} profiles but only {available} are available (short by {shortfall})")]
    StratumUnderflow {
        stratum: Stratum,
        needed: usize,
        available: usize,
        shortfall: usize,
    },
    #[error("{count} {what} profiles cannot be split {male}:{female} between genders")]
    UnevenSplit {
        what: &'static str,
        count: usize,
        male: u32,
        female: u32,
    },
    #[error("gender ratio {0}:{1} is invalid")]
    BadRatio(u32, u32),
}

/// A record that could not be parsed, with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineError {
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOutcome {
    pub profiles: Vec<Profile>,
    pub errors: Vec<LineError>,
}

/// Parse one record line.
pub fn parse_profile(line: &str) -> Result<Profile, String> {
    let p: Profile = serde_json::from_str(line).map_err(|e| e.to_string())?;
    p.check_shape()?;
    Ok(p)
}

/// Read a line-delimited profile stream. Blank lines are skipped; bad
/// records are collected with their line numbers.
pub fn load_profiles<R: BufRead>(reader: R) -> Result<LoadOutcome, CorpusError> {
    let mut out = LoadOutcome::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_profile(&line) {
            Ok(p) => out.profiles.push(p),
            Err(reason) => out.errors.push(LineError { line: i + 1, reason }),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Ok,
    Missing(Vec<ProfileField>),
}

impl Verdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, Verdict::Ok)
    }
}

/// List the required fields that are null or empty on `p`.
pub fn validate_profile(p: &Profile, required: &BTreeSet<ProfileField>) -> Verdict {
    let missing: Vec<_> = required
        .iter()
        .copied()
        .filter(|f| p.is_field_empty(*f))
        .collect();
    if missing.is_empty() {
        Verdict::Ok
    } else {
        Verdict::Missing(missing)
    }
}

/// Hide the current position: job title and employer become null.
pub fn mask_job(p: &Profile) -> Profile {
    Profile {
        current_job: None,
        current_company: None,
        ..p.clone()
    }
}

/// Which of the four sampling strata a profile falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Stratum {
    pub in_role: bool,
    pub gender: Gender,
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let role = if self.in_role { "in-role" } else { "out-of-role" };
        write!(f, "{role}-{}", self.gender)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub in_role_count: usize,
    pub out_of_role_count: usize,
    /// Job title compared case-insensitively against `current_job`.
    pub role: String,
    #[serde(default)]
    pub role_synonyms: Vec<String>,
    /// Male:female parts.
    #[serde(default = "one_to_one")]
    pub gender_ratio: (u32, u32),
    pub seed: u64,
}

fn one_to_one() -> (u32, u32) {
    (1, 1)
}

impl SampleSpec {
    pub fn new(in_role_count: usize, out_of_role_count: usize, role: impl Into<String>, seed: u64) -> Self {
        Self {
            in_role_count,
            out_of_role_count,
            role: role.into(),
            role_synonyms: Vec::new(),
            gender_ratio: one_to_one(),
            seed,
        }
    }

    pub fn is_in_role(&self, p: &Profile) -> bool {
        let Some(job) = p.current_job.as_deref() else {
            return false;
        };
        let job = job.trim().to_lowercase();
        std::iter::once(&self.role)
            .chain(&self.role_synonyms)
            .any(|r| r.trim().to_lowercase() == job)
    }

    fn split(&self, what: &'static str, count: usize) -> Result<(usize, usize), CorpusError> {
        let (m, f) = self.gender_ratio;
        if m + f == 0 {
            return Err(CorpusError::BadRatio(m, f));
        }
        let parts = (m + f) as usize;
        if count % parts != 0 {
            return Err(CorpusError::UnevenSplit {
                what,
                count,
                male: m,
                female: f,
            });
        }
        let unit = count / parts;
        Ok((unit * m as usize, unit * f as usize))
    }
}

/// Draw a stratified sample without replacement.
///
/// Uses ChaCha8 seeded from `spec.seed`. Each stratum (in-role male,
/// in-role female, out-of-role male, out-of-role female, in that order) is
/// partially Fisher-Yates shuffled to pick its members; the concatenation
/// is then shuffled once more with the same generator.
pub fn sample_balanced(profiles: &[Profile], spec: &SampleSpec) -> Result<Vec<Profile>, CorpusError> {
    let (in_m, in_f) = spec.split("in-role", spec.in_role_count)?;
    let (out_m, out_f) = spec.split("out-of-role", spec.out_of_role_count)?;
    let wanted = [
        (Stratum { in_role: true, gender: Gender::Male }, in_m),
        (Stratum { in_role: true, gender: Gender::Female }, in_f),
        (Stratum { in_role: false, gender: Gender::Male }, out_m),
        (Stratum { in_role: false, gender: Gender::Female }, out_f),
    ];

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut picked = Vec::with_capacity(spec.in_role_count + spec.out_of_role_count);
    for (stratum, needed) in wanted {
        let mut pool: Vec<&Profile> = profiles
            .iter()
            .filter(|p| p.gender == stratum.gender && spec.is_in_role(p) == stratum.in_role)
            .collect();
        if pool.len() < needed {
            return Err(CorpusError::StratumUnderflow {
                stratum,
                needed,
                available: pool.len(),
                shortfall: needed - pool.len(),
            });
        }
        let (chosen, _) = pool.partial_shuffle(&mut rng, needed);
        picked.extend(chosen.iter().map(|p| (*p).clone()));
    }
    picked.shuffle(&mut rng);
    Ok(picked)
}
