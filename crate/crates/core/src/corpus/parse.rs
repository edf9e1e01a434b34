//! Readers and writers for the JSONL and token-tagged corpus formats.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, LangTag, SentimentLabel, Token, Utterance};

/// Maps tag strings found in input files onto [`LangTag`]s.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagMapping {
    tags: BTreeMap<String, LangTag>,
}

impl TagMapping {
    pub fn new<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, LangTag)>,
        S: Into<String>,
    {
        TagMapping { tags: pairs.into_iter().map(|(s, t)| (s.into(), t)).collect() }
    }

    /// `L1`, `L2`, `O`: the JSONL default.
    pub fn jsonl_default() -> Self {
        Self::new([("L1", LangTag::L1), ("L2", LangTag::L2), ("O", LangTag::Other)])
    }

    /// `ENG`, `HIN`, `0`: the token-tagged default (Hinglish-style files).
    pub fn token_tagged_default() -> Self {
        Self::new([("ENG", LangTag::L1), ("HIN", LangTag::L2), ("0", LangTag::Other)])
    }

    pub fn get(&self, tag: &str) -> Option<LangTag> {
        self.tags.get(tag).copied()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordIn {
    id: String,
    text: String,
    tokens: Vec<(String, String)>,
    #[serde(default)]
    label: Option<SentimentLabel>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    text: &'a str,
    tokens: Vec<(&'a str, &'static str)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<SentimentLabel>,
}

/// Reads newline-delimited JSON records. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn parse_jsonl<R: BufRead>(reader: R, name: &str, mapping: &TagMapping) -> Result<Corpus, CorpusError> {
    let mut utterances = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordIn = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Parse { line: line_no, message: e.to_string() })?;
        let mut tokens = Vec::with_capacity(rec.tokens.len());
        for (surface, tag) in rec.tokens {
            let tag = mapping
                .get(&tag)
                .ok_or(CorpusError::UnknownTag { line: line_no, tag })?;
            tokens.push(Token { surface, tag });
        }
        let u = Utterance { id: rec.id, text: rec.text, tokens, gold: rec.label };
        u.validate().map_err(|e| CorpusError::Parse { line: line_no, message: e.to_string() })?;
        utterances.push(u);
    }
    Corpus::new(name, utterances)
}

/// Writes a corpus in the JSONL format with the default `L1`/`L2`/`O` tags.
pub fn write_jsonl<W: Write>(corpus: &Corpus, mut w: W) -> Result<(), CorpusError> {
    for u in corpus {
        let rec = RecordOut {
            id: &u.id,
            text: &u.text,
            tokens: u
                .tokens
                .iter()
                .map(|t| {
                    let tag = match t.tag {
                        LangTag::L1 => "L1",
                        LangTag::L2 => "L2",
                        LangTag::Other => "O",
                    };
                    (t.surface.as_str(), tag)
                })
                .collect(),
            label: u.gold,
        };
        serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the token-per-line format: blank-line separated blocks, each headed
/// by `meta <id> [label]` and followed by `<surface><TAB><tag>` lines.
pub fn parse_token_tagged<R: BufRead>(
    reader: R,
    name: &str,
    mapping: &TagMapping,
) -> Result<Corpus, CorpusError> {
    let mut utterances = Vec::new();
    let mut current: Option<(String, Option<SentimentLabel>, Vec<Token>)> = None;

    let finish = |cur: &mut Option<(String, Option<SentimentLabel>, Vec<Token>)>, out: &mut Vec<Utterance>| {
        if let Some((id, gold, tokens)) = cur.take() {
            out.push(Utterance::from_tokens(id, tokens, gold));
        }
    };

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(&mut current, &mut utterances);
            continue;
        }
        match current.as_mut() {
            None => {
                let mut fields = line.split_whitespace();
                if fields.next() != Some("meta") {
                    return Err(CorpusError::Parse {
                        line: line_no,
                        message: "block does not start with a meta header".into(),
                    });
                }
                let id = fields.next().ok_or_else(|| CorpusError::Parse {
                    line: line_no,
                    message: "meta header without id".into(),
                })?;
                let gold = match fields.next() {
                    None => None,
                    Some(l) => Some(SentimentLabel::parse(l).ok_or_else(|| CorpusError::Parse {
                        line: line_no,
                        message: format!("unknown sentiment label {l:?}"),
                    })?),
                };
                current = Some((id.to_string(), gold, Vec::new()));
            }
            Some((_, _, tokens)) => {
                let (surface, tag) = split_token_line(line).ok_or_else(|| CorpusError::Parse {
                    line: line_no,
                    message: "expected `<surface><TAB><tag>`".into(),
                })?;
                let tag = mapping.get(tag).ok_or_else(|| CorpusError::UnknownTag {
                    line: line_no,
                    tag: tag.to_string(),
                })?;
                tokens.push(Token::new(surface, tag));
            }
        }
    }
    finish(&mut current, &mut utterances);
    Corpus::new(name, utterances)
}

// Tab is the canonical separator; fall back to the last whitespace run.
fn split_token_line(line: &str) -> Option<(&str, &str)> {
    let (surface, tag) = match line.rsplit_once('\t') {
        Some(pair) => pair,
        None => line.trim_end().rsplit_once(char::is_whitespace)?,
    };
    let surface = surface.trim_end();
    let tag = tag.trim();
    if surface.is_empty() || tag.is_empty() {
        return None;
    }
    Some((surface, tag))
}
