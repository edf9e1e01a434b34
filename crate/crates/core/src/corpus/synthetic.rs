//! Desk-scale stand-in for real code-switched sentiment datasets.
//!
//! Each language has a vocabulary split into three equal-ish parts: words
//! indicative of the positive class, words indicative of the negative class,
//! and shared words. An utterance of class `c` draws its L2 fraction from a
//! normal around `c`'s mix mean (clipped to [0, 1]), then draws every token's
//! language from that fraction and its word from `c`'s indicative words or the
//! shared words. Every utterance carries at least one indicative word.
//!
//! The source corpus is pure-L1 labeled data, 60% positive: a model pre-trained on
//! it knows L1 sentiment words and nothing about L2, which is the zero-shot
//! situation of an English model facing code-mixed text.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, LangTag, SentimentLabel, Token, Utterance};

const MIX_SIGMA: f64 = 0.15;
const OTHER_PROB: f64 = 0.1;
const INDICATIVE_PROB: f64 = 0.15;
const TEST_FRACTION: f64 = 0.2;
/// Positive share of the source corpus. The leaning gives the zero-shot model a
/// positive default on text it cannot read.
const SOURCE_PRIOR_POSITIVE: f64 = 0.6;
const SYMBOLS: [&str; 6] = ["!", "?", ".", "...", "#", "@user"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub size: usize,
    pub class_prior_positive: f64,
    pub vocab_size_l1: usize,
    pub vocab_size_l2: usize,
    pub mix_mean_positive: f64,
    pub mix_mean_negative: f64,
    pub length_range: (usize, usize),
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            size: 2000,
            class_prior_positive: 0.5,
            vocab_size_l1: 60,
            vocab_size_l2: 60,
            mix_mean_positive: 0.35,
            mix_mean_negative: 0.7,
            length_range: (6, 16),
            label_noise: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |m: String| Err(CorpusError::Config(m));
        if self.size < 2 {
            return fail(format!("size must be at least 2, got {}", self.size));
        }
        if !(0.0..=1.0).contains(&self.class_prior_positive) {
            return fail(format!("class_prior_positive {} outside [0,1]", self.class_prior_positive));
        }
        for (name, v) in [("mix_mean_positive", self.mix_mean_positive), ("mix_mean_negative", self.mix_mean_negative)] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} {v} outside [0,1]"));
            }
        }
        let (lo, hi) = self.length_range;
        if lo < 1 || lo > hi {
            return fail(format!("length_range ({lo},{hi}) must satisfy 1 <= min <= max"));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return fail(format!("label_noise {} outside [0,0.5)", self.label_noise));
        }
        for (name, v) in [("vocab_size_l1", self.vocab_size_l1), ("vocab_size_l2", self.vocab_size_l2)] {
            if v < 3 {
                return fail(format!("{name} must be at least 3, got {v}"));
            }
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> SyntheticVocabulary {
        SyntheticVocabulary { l1: self.vocab_size_l1, l2: self.vocab_size_l2 }
    }
}

/// Word inventory of a generated corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticVocabulary {
    l1: usize,
    l2: usize,
}

impl SyntheticVocabulary {
    fn size(&self, lang: LangTag) -> usize {
        match lang {
            LangTag::L1 => self.l1,
            LangTag::L2 => self.l2,
            LangTag::Other => 0,
        }
    }

    fn prefix(lang: LangTag) -> &'static str {
        match lang {
            LangTag::L1 => "a",
            LangTag::L2 => "b",
            LangTag::Other => "",
        }
    }

    fn word(lang: LangTag, index: usize) -> String {
        format!("{}{index}", Self::prefix(lang))
    }

    // indicative block of class c: [k*c, k*(c+1)), shared: [2k, size)
    fn block(&self, lang: LangTag) -> usize {
        self.size(lang) / 3
    }

    fn indicative(&self, lang: LangTag, class: SentimentLabel, rng: &mut impl Rng) -> String {
        let k = self.block(lang);
        let base = if class == SentimentLabel::Positive { 0 } else { k };
        Self::word(lang, base + rng.random_range(0..k))
    }

    fn shared(&self, lang: LangTag, rng: &mut impl Rng) -> String {
        let k = self.block(lang);
        Self::word(lang, rng.random_range(2 * k..self.size(lang)))
    }

    /// The class a surface is indicative of, or `None` for shared words and symbols.
    pub fn indicative_class(&self, surface: &str) -> Option<SentimentLabel> {
        let (lang, rest) = match surface.strip_prefix('a') {
            Some(r) => (LangTag::L1, r),
            None => (LangTag::L2, surface.strip_prefix('b')?),
        };
        let idx: usize = rest.parse().ok()?;
        let k = self.block(lang);
        if idx < k {
            Some(SentimentLabel::Positive)
        } else if idx < 2 * k {
            Some(SentimentLabel::Negative)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticCorpora {
    pub train: Corpus,
    pub test: Corpus,
    pub source: Corpus,
}

/// Generates train/test target corpora and a pure-L1 source corpus.
///
/// Exactly `round(size * class_prior_positive)` utterances across train and
/// test are generated from the positive class; gold labels are flipped
/// afterwards with probability `label_noise`. Test holds `round(0.2 * size)`
/// utterances.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpora, CorpusError> {
    spec.validate()?;
    let vocab = spec.vocabulary();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let n_pos = (spec.size as f64 * spec.class_prior_positive).round() as usize;
    let mut classes: Vec<SentimentLabel> = std::iter::repeat_n(SentimentLabel::Positive, n_pos)
        .chain(std::iter::repeat_n(SentimentLabel::Negative, spec.size - n_pos))
        .collect();
    classes.shuffle(&mut rng);

    let mut target: Vec<Utterance> = classes
        .iter()
        .enumerate()
        .map(|(i, &class)| {
            let mean = match class {
                SentimentLabel::Positive => spec.mix_mean_positive,
                _ => spec.mix_mean_negative,
            };
            let mut u = generate_one(format!("u{i:06}"), class, mean, spec, &vocab, &mut rng);
            if rng.random_bool(spec.label_noise) {
                u.gold = Some(flip(class));
            }
            u
        })
        .collect();

    let n_test = (spec.size as f64 * TEST_FRACTION).round() as usize;
    let train_utts = target.split_off(n_test);
    let test_utts = target;

    let mut src_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5EED_5017_CE00_0001);
    let n_source_pos = (spec.size as f64 * SOURCE_PRIOR_POSITIVE).round() as usize;
    let source_utts = (0..spec.size)
        .map(|i| {
            let class = if i < n_source_pos { SentimentLabel::Positive } else { SentimentLabel::Negative };
            generate_one(format!("s{i:06}"), class, 0.0, spec, &vocab, &mut src_rng)
        })
        .collect();

    Ok(SyntheticCorpora {
        train: Corpus::new("synthetic-train", train_utts)?,
        test: Corpus::new("synthetic-test", test_utts)?,
        source: Corpus::new("synthetic-source", source_utts)?,
    })
}

fn flip(label: SentimentLabel) -> SentimentLabel {
    match label {
        SentimentLabel::Positive => SentimentLabel::Negative,
        _ => SentimentLabel::Positive,
    }
}

fn generate_one(
    id: String,
    class: SentimentLabel,
    mix_mean: f64,
    spec: &SyntheticSpec,
    vocab: &SyntheticVocabulary,
    rng: &mut ChaCha8Rng,
) -> Utterance {
    let normal = Normal::new(mix_mean, MIX_SIGMA).expect("sigma is positive");
    let l2_fraction = if mix_mean == 0.0 { 0.0 } else { normal.sample(rng).clamp(0.0, 1.0) };
    let (lo, hi) = spec.length_range;
    let len = rng.random_range(lo..=hi);

    let pick_lang = |rng: &mut ChaCha8Rng| if rng.random_bool(l2_fraction) { LangTag::L2 } else { LangTag::L1 };

    let mut tokens = Vec::with_capacity(len);
    let mut has_indicative = false;
    for _ in 0..len {
        if rng.random_bool(OTHER_PROB) {
            tokens.push(Token::new(SYMBOLS[rng.random_range(0..SYMBOLS.len())], LangTag::Other));
            continue;
        }
        let lang = pick_lang(rng);
        let word = if rng.random_bool(INDICATIVE_PROB) {
            has_indicative = true;
            vocab.indicative(lang, class, rng)
        } else {
            vocab.shared(lang, rng)
        };
        tokens.push(Token::new(word, lang));
    }

    if !has_indicative {
        let words: Vec<usize> = (0..len).filter(|&i| tokens[i].tag != LangTag::Other).collect();
        let pos = if words.is_empty() { rng.random_range(0..len) } else { words[rng.random_range(0..words.len())] };
        let lang = if tokens[pos].tag == LangTag::Other { pick_lang(rng) } else { tokens[pos].tag };
        tokens[pos] = Token::new(vocab.indicative(lang, class, rng), lang);
    }

    Utterance::from_tokens(id, tokens, Some(class))
}
