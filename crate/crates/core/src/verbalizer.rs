//! Verbalizer: maps single generated tokens onto binary gender classes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// The shipped 126-token lexicon (`token<TAB>class`).
pub const CANONICAL_LEXICON: &str = include_str!("../data/lexicon.tsv");
pub const CANONICAL_PER_CLASS: usize = 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenderClass {
    Female,
    Male,
}

impl GenderClass {
    pub fn as_str(self) -> &'static str {
        match self {
            GenderClass::Female => "female",
            GenderClass::Male => "male",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenClass {
    Female,
    Male,
    Unmapped,
}

impl From<GenderClass> for TokenClass {
    fn from(g: GenderClass) -> Self {
        match g {
            GenderClass::Female => TokenClass::Female,
            GenderClass::Male => TokenClass::Male,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenderLexeme {
    pub token: String,
    pub gender_class: GenderClass,
}

/// Word-boundary markers that subword vocabularies prefix to tokens:
/// `Ġ` (byte-level BPE) and `▁` (sentencepiece).
const BOUNDARY_MARKERS: [char; 2] = ['\u{0120}', '\u{2581}'];

/// Strip boundary markers and surrounding whitespace, then lowercase.
pub fn normalize(token: &str) -> String {
    token
        .trim_start_matches(|c: char| c.is_whitespace() || BOUNDARY_MARKERS.contains(&c))
        .trim_end()
        .to_lowercase()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strictness {
    Canonical,
    Custom,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<String, GenderClass>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub total: usize,
    pub female: usize,
    pub male: usize,
    pub hash: String,
    pub problems: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.problems.is_empty()
    }
}

impl Lexicon {
    pub fn canonical() -> Self {
        Lexicon::parse(CANONICAL_LEXICON, "lexicon.tsv", Strictness::Canonical)
            .expect("shipped lexicon is valid")
    }

    pub fn parse(text: &str, source_name: &str, strictness: Strictness) -> Result<Self> {
        let mut entries: BTreeMap<String, GenderClass> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                source_name: source_name.to_string(),
                line: idx + 1,
                message,
            };
            let Some((token, class)) = line.split_once('\t') else {
                return Err(err(format!("expected `token<TAB>class`, got {line:?}")));
            };
            let class = match class.trim() {
                "female" => GenderClass::Female,
                "male" => GenderClass::Male,
                other => return Err(err(format!("unknown class {other:?}"))),
            };
            let token = normalize(token);
            if token.is_empty() {
                return Err(err("empty token".into()));
            }
            match entries.get(&token) {
                Some(&prev) if prev != class => {
                    return Err(Error::Validation(format!(
                        "class collision: {token:?} listed as both {} and {}",
                        prev.as_str(),
                        class.as_str()
                    )))
                }
                Some(_) => {
                    return Err(Error::Validation(format!("duplicate token {token:?}")));
                }
                None => {
                    entries.insert(token, class);
                }
            }
        }
        let lexicon = Lexicon { entries };
        if strictness == Strictness::Canonical {
            let report = lexicon.validate(true);
            if !report.is_ok() {
                return Err(Error::Validation(report.problems.join("; ")));
            }
        }
        Ok(lexicon)
    }

    pub fn from_entries<I: IntoIterator<Item = GenderLexeme>>(entries: I) -> Result<Self> {
        let mut text = String::new();
        for e in entries {
            text.push_str(&format!("{}\t{}\n", e.token, e.gender_class.as_str()));
        }
        Lexicon::parse(&text, "<entries>", Strictness::Custom)
    }

    /// Count and shape check. `canonical` adds the 126 / 63 / 63 requirement.
    pub fn validate(&self, canonical: bool) -> ValidationReport {
        let female = self.count(GenderClass::Female);
        let male = self.count(GenderClass::Male);
        let mut problems = Vec::new();
        if canonical && (female != CANONICAL_PER_CLASS || male != CANONICAL_PER_CLASS) {
            problems.push(format!(
                "canonical lexicon must be {CANONICAL_PER_CLASS}/{CANONICAL_PER_CLASS}; \
                 found {female} female and {male} male"
            ));
        }
        for token in self.entries.keys() {
            if normalize(token) != *token {
                problems.push(format!("token {token:?} is not normalized"));
            }
        }
        ValidationReport {
            total: self.entries.len(),
            female,
            male,
            hash: self.hash(),
            problems,
        }
    }

    pub fn classify(&self, token: &str) -> TokenClass {
        self.entries
            .get(&normalize(token))
            .map_or(TokenClass::Unmapped, |&g| g.into())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, class: GenderClass) -> usize {
        self.entries.values().filter(|&&c| c == class).count()
    }

    pub fn entries(&self) -> impl Iterator<Item = GenderLexeme> + '_ {
        self.entries.iter().map(|(t, &c)| GenderLexeme {
            token: t.clone(),
            gender_class: c,
        })
    }

    /// SHA-256 over the sorted `token<TAB>class` lines; independent of file
    /// layout, comments, and entry order.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (token, class) in &self.entries {
            hasher.update(token.as_bytes());
            hasher.update(b"\t");
            hasher.update(class.as_str().as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}
