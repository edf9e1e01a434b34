//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use selftrain::backend::{BackendConfig, BackendError, BuiltinModel, ClassifierBackend, Prediction, ProbVector, TrainExample};
use selftrain::corpus::{generate_synthetic, Corpus, LangTag, SentimentLabel, SyntheticCorpora, SyntheticSpec, Token, Utterance};

pub use SentimentLabel::{Negative as N, Positive as P};

pub const PRETRAIN_EPOCHS: usize = 3;

pub fn synthetic(seed: u64, prior: f64) -> SyntheticCorpora {
    generate_synthetic(&SyntheticSpec { seed, class_prior_positive: prior, ..SyntheticSpec::default() }).unwrap()
}

/// Built-in model pre-trained on the pure-L1 source corpus.
pub fn pretrained(seed: u64, source: &Corpus) -> BuiltinModel {
    let mut m = BuiltinModel::new(BackendConfig { seed, ..BackendConfig::default() }).unwrap();
    m.pretrain(source, PRETRAIN_EPOCHS).unwrap();
    m
}

/// Predicted labels of every utterance in `corpus`.
pub fn predicted_labels<'a>(model: &BuiltinModel, corpus: &'a Corpus) -> HashMap<&'a str, SentimentLabel> {
    let all: Vec<&Utterance> = corpus.iter().collect();
    model.predict(&all).into_iter().zip(corpus.iter()).map(|(p, u)| (u.id.as_str(), p.predicted)).collect()
}

pub fn utterance(id: &str, tags: &[LangTag], gold: Option<SentimentLabel>) -> Utterance {
    let tokens = tags.iter().enumerate().map(|(i, &t)| Token::new(format!("{id}w{i}"), t)).collect();
    Utterance::from_tokens(id, tokens, gold)
}

pub fn prediction(id: &str, label: SentimentLabel, conf: f64) -> Prediction {
    let probs = match label {
        P => ProbVector { p_positive: conf, p_negative: 1.0 - conf },
        _ => ProbVector { p_positive: 1.0 - conf, p_negative: conf },
    };
    Prediction::new(id, probs)
}

/// Wraps a backend and records the utterance ids of every training call.
pub struct Recording<B> {
    pub inner: B,
    pub batches: Vec<Vec<String>>,
}

impl<B> Recording<B> {
    pub fn new(inner: B) -> Self {
        Recording { inner, batches: Vec::new() }
    }
}

impl<B: ClassifierBackend> ClassifierBackend for Recording<B> {
    fn predict_batch(&mut self, us: &[&Utterance]) -> Result<Vec<Prediction>, BackendError> {
        self.inner.predict_batch(us)
    }

    fn train(&mut self, examples: &[TrainExample], epochs: usize) -> Result<(), BackendError> {
        self.batches.push(examples.iter().map(|e| e.utterance_id.clone()).collect());
        self.inner.train(examples, epochs)
    }
}

/// Every prediction comes from a fixed table.
pub struct Table(pub HashMap<String, ProbVector>);

impl ClassifierBackend for Table {
    fn predict_batch(&mut self, us: &[&Utterance]) -> Result<Vec<Prediction>, BackendError> {
        Ok(us.iter().map(|u| Prediction::new(u.id.clone(), self.0[&u.id])).collect())
    }

    fn train(&mut self, _: &[TrainExample], _: usize) -> Result<(), BackendError> {
        Ok(())
    }
}

/// Per-class precision/recall/F1 written out from the textbook definitions.
pub struct BruteReport {
    pub precision: [f64; 2],
    pub recall: [f64; 2],
    pub f1: [f64; 2],
    pub support: [usize; 2],
    pub weighted_f1: f64,
    pub accuracy: f64,
}

pub fn brute_force_score(gold: &[SentimentLabel], pred: &[SentimentLabel]) -> BruteReport {
    let classes = [P, N];
    let mut r = BruteReport { precision: [0.0; 2], recall: [0.0; 2], f1: [0.0; 2], support: [0; 2], weighted_f1: 0.0, accuracy: 0.0 };
    for (k, &c) in classes.iter().enumerate() {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fn_ = 0.0;
        for i in 0..gold.len() {
            match (gold[i] == c, pred[i] == c) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fn_ += 1.0,
                (false, false) => {}
            }
        }
        r.precision[k] = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        r.recall[k] = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        r.f1[k] = if r.precision[k] + r.recall[k] > 0.0 {
            2.0 * r.precision[k] * r.recall[k] / (r.precision[k] + r.recall[k])
        } else {
            0.0
        };
        r.support[k] = gold.iter().filter(|&&g| g == c).count();
    }
    let n = gold.len() as f64;
    r.weighted_f1 = (0..2).map(|k| r.support[k] as f64 / n * r.f1[k]).sum();
    r.accuracy = gold.iter().zip(pred).filter(|(g, p)| g == p).count() as f64 / n;
    r
}

/// Top-`want` ids per predicted class by sorting (confidence desc, id asc).
pub fn oracle_select(preds: &[Prediction], n_pos: usize, n_neg: usize) -> (Vec<String>, usize, usize) {
    let mut ids = Vec::new();
    let mut shortfalls = [0usize; 2];
    for (k, (class, want)) in [(P, n_pos), (N, n_neg)].into_iter().enumerate() {
        let mut pool: Vec<(f64, String)> =
            preds.iter().filter(|p| p.predicted == class).map(|p| (p.confidence, p.utterance_id.clone())).collect();
        pool.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let take = want.min(pool.len());
        ids.extend(pool.into_iter().take(take).map(|(_, id)| id));
        shortfalls[k] = want - take;
    }
    (ids, shortfalls[0], shortfalls[1])
}

/// Round half away from zero for non-negative values, without `f64::round`.
pub fn round_half_up(x: f64) -> usize {
    let fl = x.floor();
    if x - fl >= 0.5 {
        fl as usize + 1
    } else {
        fl as usize
    }
}

/// L2 / (L1 + L2) by direct tag counting.
pub fn oracle_ratio(u: &Utterance) -> Option<f64> {
    let l1 = u.tokens.iter().filter(|t| t.tag == LangTag::L1).count();
    let l2 = u.tokens.iter().filter(|t| t.tag == LangTag::L2).count();
    (l1 + l2 > 0).then(|| l2 as f64 / (l1 + l2) as f64)
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}
