use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;

/// A normalized mention string and which rewrites produced it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CanonicalPhrase {
    pub text: String,
    pub acronym_expanded: bool,
    pub plural_folded: bool,
}

/// Words ending in `s` that are not regular plurals, or whose plural
/// form is also the singular.
const NOT_PLURAL: &[&str] = &[
    "data", "news", "series", "species", "physics", "mathematics", "statistics", "linguistics", "economics",
    "semantics", "pragmatics", "phonetics", "robotics", "genomics", "analytics", "ethics", "graphics", "means",
    "corpus", "status", "focus", "bias", "gas", "lens", "thus", "always", "perhaps", "towards", "across",
    "various", "previous", "numerous", "this", "its", "his", "is", "was", "has", "does", "yes", "us",
];

/// Words ending in `ses` whose singular ends in `sis`.
const SES_TO_SIS: &[(&str, &str)] = &[
    ("analyses", "analysis"),
    ("hypotheses", "hypothesis"),
    ("syntheses", "synthesis"),
    ("theses", "thesis"),
    ("diagnoses", "diagnosis"),
    ("parentheses", "parenthesis"),
    ("emphases", "emphasis"),
];

/// Singular form of a regular English plural; other words are returned
/// unchanged. The result never ends in a foldable plural, so folding is
/// idempotent.
pub fn fold_plural(word: &str) -> Option<String> {
    if let Some((_, singular)) = SES_TO_SIS.iter().find(|(p, _)| *p == word) {
        return Some(singular.to_string());
    }
    let n = word.chars().count();
    if n <= 3 || !word.is_ascii() || NOT_PLURAL.contains(&word) || !word.ends_with('s') {
        return None;
    }
    let strip = |k: usize| Some(word[..word.len() - k].to_string());
    if word.ends_with("ss") || word.ends_with("us") || word.ends_with("is") {
        return None;
    }
    if word.ends_with("ies") && n > 4 {
        return Some(format!("{}y", &word[..word.len() - 3]));
    }
    if word.ends_with("sses") || word.ends_with("xes") || word.ends_with("ches") || word.ends_with("shes") {
        return strip(2);
    }
    strip(1)
}

fn collapse(raw: &str) -> String {
    raw.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

fn fold_last_word(text: &str) -> Option<String> {
    let (head, last) = match text.rsplit_once(' ') {
        Some((h, l)) => (Some(h), l),
        None => (None, text),
    };
    let folded = fold_plural(last)?;
    Some(match head {
        Some(h) => format!("{h} {folded}"),
        None => folded,
    })
}

/// Short forms (lower-cased) mapped to normalized long forms.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcronymTable {
    entries: BTreeMap<String, String>,
}

impl AcronymTable {
    /// Builds a table from explicit pairs; later duplicates are ignored.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for (short, long) in pairs {
            counts.entry(collapse(short)).or_default().entry(long.to_string()).or_insert(1);
        }
        Self::from_counts(counts)
    }

    /// Keeps the most frequent expansion per short form, ties to the
    /// lexicographically smallest. Long forms are normalized without
    /// acronym expansion, and entries whose expansion is itself a short
    /// form are dropped so that normalization stays idempotent.
    fn from_counts(counts: BTreeMap<String, BTreeMap<String, usize>>) -> Self {
        let mut entries = BTreeMap::new();
        for (short, longs) in counts {
            let mut folded: BTreeMap<String, usize> = BTreeMap::new();
            for (long, c) in longs {
                let text = collapse(&long);
                let text = fold_last_word(&text).unwrap_or(text);
                *folded.entry(text).or_default() += c;
            }
            // BTreeMap iteration is lexicographic, so the first maximum wins ties
            let mut best: Option<(&String, usize)> = None;
            for (long, &c) in &folded {
                if best.is_none_or(|(_, b)| c > b) {
                    best = Some((long, c));
                }
            }
            if let Some((long, _)) = best {
                if *long != short {
                    entries.insert(short, long.clone());
                }
            }
        }
        let keys: Vec<String> = entries.keys().cloned().collect();
        entries.retain(|_, long| !keys.contains(long));
        AcronymTable { entries }
    }

    pub fn get(&self, short: &str) -> Option<&str> {
        self.entries.get(short).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

fn initials(token: &str) -> impl Iterator<Item = char> + '_ {
    token
        .split('-')
        .filter_map(|part| part.chars().next())
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
}

/// Letters of a candidate short form, dropping a plural `s` after an
/// upper-case letter (`CRFs`).
fn short_letters(short: &str) -> Option<Vec<char>> {
    if !short.chars().all(|c| c.is_alphanumeric() || c == '-') || !short.chars().any(|c| c.is_uppercase()) {
        return None;
    }
    let mut chars: Vec<char> = short.chars().filter(|c| c.is_alphanumeric()).collect();
    if chars.len() > 2 && chars.last() == Some(&'s') && chars[chars.len() - 2].is_uppercase() {
        chars.pop();
    }
    let letters: Vec<char> = chars.into_iter().flat_map(char::to_lowercase).collect();
    (letters.len() >= 2 && letters.len() <= 12).then_some(letters)
}

/// `(short, long)` pairs from `long form ( SHORT )` patterns in one
/// sentence, where the initials of the words just before the parenthesis
/// (hyphenated parts counted separately) spell the short form.
pub fn find_acronyms(tokens: &[String]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for i in 0..tokens.len().saturating_sub(2) {
        if tokens[i] != "(" || tokens[i + 2] != ")" {
            continue;
        }
        let Some(letters) = short_letters(&tokens[i + 1]) else { continue };
        for start in (0..i).rev() {
            let spelled: Vec<char> = tokens[start..i].iter().flat_map(|t| initials(t)).collect();
            if spelled.len() > letters.len() {
                break;
            }
            if spelled == letters {
                let short = tokens[i + 1].trim_end_matches('s');
                let short = if short.len() + 1 == tokens[i + 1].len() && short_letters(short).is_some() {
                    short
                } else {
                    tokens[i + 1].as_str()
                };
                out.push((short.to_string(), tokens[start..i].join(" ")));
                break;
            }
        }
    }
    out
}

/// Corpus-wide acronym table from every sentence of `docs`.
pub fn build_acronym_table<'a>(docs: impl IntoIterator<Item = &'a Document>) -> AcronymTable {
    let mut counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for doc in docs {
        for sentence in &doc.sentences {
            for (short, long) in find_acronyms(sentence) {
                *counts.entry(collapse(&short)).or_default().entry(long).or_default() += 1;
            }
        }
    }
    AcronymTable::from_counts(counts)
}

/// Lower-cases, collapses whitespace, expands a whole-phrase acronym and
/// folds a plural last word.
pub fn normalize_phrase(raw: &str, table: &AcronymTable) -> CanonicalPhrase {
    let text = collapse(raw);
    if let Some(long) = table.get(&text) {
        return CanonicalPhrase { text: long.to_string(), acronym_expanded: true, plural_folded: false };
    }
    match fold_last_word(&text) {
        Some(folded) => match table.get(&folded) {
            Some(long) => CanonicalPhrase { text: long.to_string(), acronym_expanded: true, plural_folded: true },
            None => CanonicalPhrase { text: folded, acronym_expanded: false, plural_folded: true },
        },
        None => CanonicalPhrase { text, acronym_expanded: false, plural_folded: false },
    }
}
