//! Code-switched utterances and the corpora that hold them.

mod parse;
mod preprocess;
mod synthetic;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{parse_jsonl, parse_token_tagged, write_jsonl, TagMapping};
pub use preprocess::{filter_two_class, is_url, preprocess, FilterReport, PreprocessReport};
pub use synthetic::{generate_synthetic, SyntheticCorpora, SyntheticSpec, SyntheticVocabulary};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown language tag {tag:?}")]
    UnknownTag { line: usize, tag: String },
    #[error("duplicate utterance id {0:?}")]
    DuplicateId(String),
    #[error("invalid utterance {id:?}: {message}")]
    InvalidUtterance { id: String, message: String },
    #[error("invalid synthetic spec: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Language tag of a single token.
///
/// `L1` is the matrix language the initialization model was trained on, `L2`
/// the embedded language, and `Other` covers symbols, mentions and anything
/// that is not a word of either language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LangTag {
    L1,
    L2,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentLabel {
    Positive,
    Negative,
    Neutral,
}

impl SentimentLabel {
    /// The two classes an engine run works with.
    pub const BINARY: [SentimentLabel; 2] = [SentimentLabel::Positive, SentimentLabel::Negative];

    pub fn as_str(self) -> &'static str {
        match self {
            SentimentLabel::Positive => "positive",
            SentimentLabel::Negative => "negative",
            SentimentLabel::Neutral => "neutral",
        }
    }

    pub fn parse(s: &str) -> Option<SentimentLabel> {
        match s.to_ascii_lowercase().as_str() {
            "positive" => Some(SentimentLabel::Positive),
            "negative" => Some(SentimentLabel::Negative),
            "neutral" => Some(SentimentLabel::Neutral),
            _ => None,
        }
    }

    /// Row/column index in two-class tables: Positive 0, Negative 1.
    pub fn binary_index(self) -> Option<usize> {
        match self {
            SentimentLabel::Positive => Some(0),
            SentimentLabel::Negative => Some(1),
            SentimentLabel::Neutral => None,
        }
    }

    pub fn is_binary(self) -> bool {
        self != SentimentLabel::Neutral
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub tag: LangTag,
}

impl Token {
    pub fn new(surface: impl Into<String>, tag: LangTag) -> Self {
        Token { surface: surface.into(), tag }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub id: String,
    pub text: String,
    pub tokens: Vec<Token>,
    /// Evaluation-only. The engine never reads this field.
    pub gold: Option<SentimentLabel>,
}

impl Utterance {
    /// Builds an utterance whose text is the token surfaces joined by single spaces.
    pub fn from_tokens(id: impl Into<String>, tokens: Vec<Token>, gold: Option<SentimentLabel>) -> Self {
        let text = join_surfaces(&tokens);
        Utterance { id: id.into(), text, tokens, gold }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |message: &str| CorpusError::InvalidUtterance {
            id: self.id.clone(),
            message: message.to_string(),
        };
        if self.id.is_empty() {
            return Err(invalid("empty id"));
        }
        if self.tokens.is_empty() && !self.text.is_empty() {
            return Err(invalid("non-empty text without tokens"));
        }
        if self.tokens.iter().any(|t| t.surface.contains('\n')) {
            return Err(invalid("token surface contains a newline"));
        }
        Ok(())
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.surface.as_str())
    }

    /// (#L1, #L2) word counts; `Other` tokens are not words.
    pub fn word_counts(&self) -> (usize, usize) {
        self.tokens.iter().fold((0, 0), |(l1, l2), t| match t.tag {
            LangTag::L1 => (l1 + 1, l2),
            LangTag::L2 => (l1, l2 + 1),
            LangTag::Other => (l1, l2),
        })
    }
}

pub(crate) fn join_surfaces(tokens: &[Token]) -> String {
    let mut text = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            text.push(' ');
        }
        text.push_str(&t.surface);
    }
    text
}

/// An ordered collection of utterances with pairwise distinct ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    name: String,
    utterances: Vec<Utterance>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, utterances: Vec<Utterance>) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(utterances.len());
        for (i, u) in utterances.iter().enumerate() {
            u.validate()?;
            if index.insert(u.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(u.id.clone()));
            }
        }
        Ok(Corpus { name: name.into(), utterances, index })
    }

    pub fn empty(name: impl Into<String>) -> Self {
        Corpus { name: name.into(), utterances: Vec::new(), index: HashMap::new() }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Utterance> {
        self.utterances.iter()
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        self.index.get(id).map(|&i| &self.utterances[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn into_utterances(self) -> Vec<Utterance> {
        self.utterances
    }

    /// Builds a corpus from a subset of utterances that already satisfied the
    /// invariants; order is kept.
    pub(crate) fn from_trusted(name: String, utterances: Vec<Utterance>) -> Self {
        let index = utterances.iter().enumerate().map(|(i, u)| (u.id.clone(), i)).collect();
        Corpus { name, utterances, index }
    }

    /// Gold labels by id, for evaluation.
    pub fn gold_map(&self) -> HashMap<&str, SentimentLabel> {
        self.utterances
            .iter()
            .filter_map(|u| u.gold.map(|g| (u.id.as_str(), g)))
            .collect()
    }
}

/// On-disk corpus layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    TokenTagged,
}

impl CorpusFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "jsonl" => Some(CorpusFormat::Jsonl),
            "tagged" | "token-tagged" => Some(CorpusFormat::TokenTagged),
            _ => None,
        }
    }

    /// JSONL when the first non-blank character is `{`.
    pub fn detect(content: &str) -> Self {
        match content.trim_start().chars().next() {
            Some('{') => CorpusFormat::Jsonl,
            _ => CorpusFormat::TokenTagged,
        }
    }
}

/// Reads a corpus file with the default tag mapping of its format. The corpus
/// is named after the file stem.
pub fn read_corpus(path: &std::path::Path, format: Option<CorpusFormat>) -> Result<Corpus, CorpusError> {
    let content = std::fs::read_to_string(path)?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match format.unwrap_or_else(|| CorpusFormat::detect(&content)) {
        CorpusFormat::Jsonl => parse_jsonl(content.as_bytes(), &name, &TagMapping::jsonl_default()),
        CorpusFormat::TokenTagged => parse_token_tagged(content.as_bytes(), &name, &TagMapping::token_tagged_default()),
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Utterance;
    type IntoIter = std::slice::Iter<'a, Utterance>;

    fn into_iter(self) -> Self::IntoIter {
        self.utterances.iter()
    }
}
