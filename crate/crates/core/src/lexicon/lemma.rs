//! Rule-based English lemmatizer.
//!
//! Suffix rules cover plurals, possessives, `-ing`, `-ed` and the
//! comparative `-er`/`-est` endings. Irregular forms and words that merely
//! look inflected live in an exception table shipped as data. Rules are
//! applied until a fixed point is reached, so `lemmatize` is idempotent.

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

const EXCEPTIONS_TSV: &str = include_str!("../../data/lemma_exceptions.tsv");
const GRADABLE_TXT: &str = include_str!("../../data/gradable_adjectives.txt");

/// Upper bound on rule applications; every rule shortens the word so this
/// is never reached in practice.
const MAX_STEPS: usize = 16;

// Two-letter stem endings after which a dropped silent `e` is restored,
// regardless of what precedes them.
const E_ALWAYS: &[&str] = &[
    "iz", "yz", "ys", "dg", "rg", "lv", "rv", "nc", "bl", "pl", "tl", "dl", "gl", "kl", "cl", "fl",
    "zl", "us", "os", "as", "ud",
];

// Endings that restore `e` only when preceded by a consonant
// (`nurtur-` -> nurture, but `pour-` stays pour).
const E_AFTER_CONSONANT: &[&str] = &[
    "at", "iv", "ov", "ur", "ir", "uc", "ic", "ac", "id", "ut", "ag", "av", "is", "ot", "ar", "in",
    "ib",
];

struct Tables {
    exceptions: HashMap<String, String>,
    gradable: HashSet<String>,
}

fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let exceptions = EXCEPTIONS_TSV
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .filter_map(|l| {
                let (form, lemma) = l.split_once('\t')?;
                Some((form.trim().to_string(), lemma.trim().to_string()))
            })
            .collect();
        let gradable = GRADABLE_TXT
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
        Tables {
            exceptions,
            gradable,
        }
    })
}

/// The irregular-form table as `(form, lemma)` pairs.
pub fn exception_table() -> impl Iterator<Item = (&'static str, &'static str)> {
    tables()
        .exceptions
        .iter()
        .map(|(f, l)| (f.as_str(), l.as_str()))
}

/// Reduce a word to its dictionary form. Input is trimmed and lowercased;
/// unknown shapes come back lowercased and otherwise unchanged.
pub fn lemmatize(word: &str) -> String {
    let mut current = word.trim().to_lowercase();
    for _ in 0..MAX_STEPS {
        match step(&current) {
            Some(next) => current = next,
            None => break,
        }
    }
    current
}

fn step(w: &str) -> Option<String> {
    let t = tables();
    if let Some(lemma) = t.exceptions.get(w) {
        return (lemma != w).then(|| lemma.clone());
    }
    if w.chars().count() <= 3 || !w.is_ascii() {
        return None;
    }

    if let Some(stem) = w.strip_suffix("'s") {
        return Some(stem.to_string());
    }
    if let Some(stem) = w.strip_suffix("s'") {
        return Some(format!("{stem}s"));
    }

    plural(w)
        .or_else(|| ing(w))
        .or_else(|| ed(w))
        .or_else(|| comparative(w, &t.gradable))
}

fn plural(w: &str) -> Option<String> {
    if w.len() > 4 {
        if let Some(stem) = w.strip_suffix("ies") {
            return Some(format!("{stem}y"));
        }
    }
    if w.ends_with("sses") {
        return Some(w[..w.len() - 2].to_string());
    }
    for suffix in ["xes", "ches", "shes", "zzes"] {
        if w.ends_with(suffix) {
            return Some(w[..w.len() - 2].to_string());
        }
    }
    if w.ends_with('s') && !["ss", "us", "is"].iter().any(|s| w.ends_with(s)) {
        return Some(w[..w.len() - 1].to_string());
    }
    None
}

fn ing(w: &str) -> Option<String> {
    let stem = w.strip_suffix("ing")?;
    if stem.len() < 2 || !has_vowel(stem) {
        return None;
    }
    Some(restore(stem))
}

fn ed(w: &str) -> Option<String> {
    if w.len() > 4 {
        if let Some(stem) = w.strip_suffix("ied") {
            return Some(format!("{stem}y"));
        }
    }
    if let Some(stem) = w.strip_suffix("eed") {
        return (measure(stem) > 0).then(|| format!("{stem}ee"));
    }
    let stem = w.strip_suffix("ed")?;
    if stem.len() < 3 || !has_vowel(stem) {
        return None;
    }
    Some(restore(stem))
}

fn comparative(w: &str, gradable: &HashSet<String>) -> Option<String> {
    let stem = w.strip_suffix("est").or_else(|| w.strip_suffix("er"))?;
    if stem.len() < 2 {
        return None;
    }
    let mut candidates = vec![stem.to_string(), format!("{stem}e")];
    if let Some(s) = stem.strip_suffix('i') {
        candidates.push(format!("{s}y"));
    }
    if ends_double_consonant(stem) {
        candidates.push(stem[..stem.len() - 1].to_string());
    }
    candidates.into_iter().find(|c| gradable.contains(c))
}

/// Undo the spelling changes English applies before `-ing`/`-ed`.
fn restore(stem: &str) -> String {
    let bytes = stem.as_bytes();
    let last = bytes[bytes.len() - 1];
    if ends_double_consonant(stem) && !matches!(last, b'l' | b's' | b'z') {
        return stem[..stem.len() - 1].to_string();
    }
    if last == b'y' {
        return stem.to_string();
    }
    if needs_e(stem) {
        return format!("{stem}e");
    }
    stem.to_string()
}

fn needs_e(stem: &str) -> bool {
    if E_ALWAYS.iter().any(|e| stem.ends_with(e)) {
        return true;
    }
    let b = stem.as_bytes();
    if b.len() >= 3 && E_AFTER_CONSONANT.iter().any(|e| stem.ends_with(e)) {
        return is_consonant(b, b.len() - 3);
    }
    ends_cvc(stem) && measure(stem) == 1
}

fn has_vowel(s: &str) -> bool {
    let b = s.as_bytes();
    (0..b.len()).any(|i| !is_consonant(b, i))
}

fn is_consonant(b: &[u8], i: usize) -> bool {
    match b[i] {
        b'a' | b'e' | b'i' | b'o' | b'u' => false,
        b'y' => i == 0 || !is_consonant(b, i - 1),
        c => c.is_ascii_alphabetic(),
    }
}

fn ends_double_consonant(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() >= 2 && b[b.len() - 1] == b[b.len() - 2] && is_consonant(b, b.len() - 1)
}

fn ends_cvc(s: &str) -> bool {
    let b = s.as_bytes();
    let n = b.len();
    n >= 3
        && is_consonant(b, n - 3)
        && !is_consonant(b, n - 2)
        && is_consonant(b, n - 1)
        && !matches!(b[n - 1], b'w' | b'x' | b'y')
}

/// Number of vowel-consonant sequences, as in the Porter stemmer's `m`.
fn measure(s: &str) -> usize {
    let b = s.as_bytes();
    let mut m = 0;
    let mut prev_vowel = false;
    for i in 0..b.len() {
        let vowel = !is_consonant(b, i);
        if prev_vowel && !vowel {
            m += 1;
        }
        prev_vowel = vowel;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn documented_examples() {
        assert_eq!(lemmatize("Nurturing"), "nurture");
        assert_eq!(lemmatize("confident"), "confident");
        assert_eq!(lemmatize("women"), "woman");
    }

    #[test]
    fn suffix_rules() {
        let cases = [
            ("skills", "skill"),
            ("abilities", "ability"),
            ("classes", "class"),
            ("teaches", "teach"),
            ("caring", "care"),
            ("loving", "love"),
            ("working", "work"),
            ("running", "run"),
            ("calling", "call"),
            ("studying", "study"),
            ("driving", "drive"),
            ("organizing", "organize"),
            ("determined", "determine"),
            ("nurtured", "nurture"),
            ("skilled", "skill"),
            ("experienced", "experience"),
            ("hoped", "hope"),
            ("hopped", "hop"),
            ("studied", "study"),
            ("stronger", "strong"),
            ("strongest", "strong"),
            ("gentler", "gentle"),
            ("bigger", "big"),
            ("happier", "happy"),
            ("teacher", "teacher"),
            ("mother", "mother"),
            ("leader", "leader"),
            ("honest", "honest"),
            ("woman's", "woman"),
            ("self-confident", "self-confident"),
            ("feelings", "feel"),
        ];
        for (word, lemma) in cases {
            assert_eq!(lemmatize(word), lemma, "lemmatize({word})");
        }
    }

    #[test]
    fn short_and_non_ascii_words_pass_through() {
        assert_eq!(lemmatize("his"), "his");
        assert_eq!(lemmatize("Bus"), "bus");
        assert_eq!(lemmatize("naïves"), "naïves");
        assert_eq!(lemmatize("  Warm "), "warm");
    }

    #[test]
    fn exception_lemmas_are_fixed_points() {
        for (form, lemma) in exception_table() {
            assert_eq!(lemmatize(lemma), lemma, "target of {form} is not stable");
        }
    }

    #[test]
    fn gradable_bases_are_fixed_points() {
        for base in &tables().gradable {
            assert_eq!(&lemmatize(base), base);
        }
    }

    proptest! {
        #[test]
        fn idempotent(word in "[a-zA-Z'-]{1,14}") {
            let once = lemmatize(&word);
            prop_assert_eq!(lemmatize(&once), once.clone());
            prop_assert_eq!(once.clone(), once.to_lowercase());
        }
    }
}
