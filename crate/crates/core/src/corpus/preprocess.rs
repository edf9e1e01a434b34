use unicode_normalization::UnicodeNormalization;

use super::{join_surfaces, Corpus, SentimentLabel, Token, Utterance};

const URL_PREFIXES: [&str; 3] = ["http://", "https://", "www."];

/// Diagnostics from [`preprocess`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PreprocessReport {
    pub urls_removed: usize,
    /// Utterances left without tokens once URLs were dropped. They stay in the corpus.
    pub emptied: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterReport {
    pub removed_neutral: usize,
}

pub fn is_url(surface: &str) -> bool {
    let lower = surface.to_lowercase();
    URL_PREFIXES.iter().any(|p| lower.starts_with(p))
}

fn normalize(surface: &str) -> String {
    surface.to_lowercase().nfc().collect()
}

/// Drops URL tokens, lowercases and NFC-normalizes the rest. The text of each
/// utterance is rebuilt from the surviving surfaces.
pub fn preprocess(corpus: &Corpus) -> (Corpus, PreprocessReport) {
    let mut report = PreprocessReport::default();
    let utterances = corpus
        .iter()
        .map(|u| {
            let before = u.tokens.len();
            let tokens: Vec<Token> = u
                .tokens
                .iter()
                .filter(|t| !is_url(&t.surface))
                .map(|t| Token { surface: normalize(&t.surface), tag: t.tag })
                .collect();
            report.urls_removed += before - tokens.len();
            if tokens.is_empty() && before > 0 {
                report.emptied.push(u.id.clone());
            }
            let text = if tokens.is_empty() && before == 0 { normalize(&u.text) } else { join_surfaces(&tokens) };
            Utterance { id: u.id.clone(), text, tokens, gold: u.gold }
        })
        .collect();
    (Corpus::from_trusted(corpus.name().to_string(), utterances), report)
}

/// Removes gold-neutral utterances. Unlabeled utterances are kept.
pub fn filter_two_class(corpus: &Corpus) -> (Corpus, FilterReport) {
    let kept: Vec<Utterance> = corpus
        .iter()
        .filter(|u| u.gold != Some(SentimentLabel::Neutral))
        .cloned()
        .collect();
    let report = FilterReport { removed_neutral: corpus.len() - kept.len() };
    (Corpus::from_trusted(corpus.name().to_string(), kept), report)
}
