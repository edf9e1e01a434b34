//! Classifier backends: probability prediction and incremental fine-tuning.

mod builtin;
mod external;
mod features;
pub mod protocol;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{SentimentLabel, Utterance};

pub use builtin::BuiltinModel;
pub use external::{ExternalBackend, ProtocolClient};
pub use features::{featurize, featurize_surfaces, fnv1a64, FeatureSet};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("non-finite weights after update")]
    Numeric,
    #[error("backend process lost: {0}")]
    Lost(String),
    #[error("protocol error: {message} (line: {raw:?})")]
    Protocol { message: String, raw: String },
    #[error("protocol error: expected {expected} probability pairs, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("predict batch {batch} failed: {source}")]
    Batch {
        batch: usize,
        #[source]
        source: Box<BackendError>,
    },
    #[error("training example {0:?} has a non-binary label")]
    NonBinaryLabel(String),
}

impl BackendError {
    /// True when the failure is divergence of the model rather than transport.
    pub fn is_numeric(&self) -> bool {
        match self {
            BackendError::Numeric => true,
            BackendError::Batch { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

/// Two-class softmax output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbVector {
    pub p_positive: f64,
    pub p_negative: f64,
}

impl ProbVector {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(p_positive: f64, p_negative: f64) -> Option<Self> {
        let ok = (0.0..=1.0).contains(&p_positive)
            && (0.0..=1.0).contains(&p_negative)
            && (p_positive + p_negative - 1.0).abs() <= Self::SUM_TOLERANCE;
        ok.then_some(ProbVector { p_positive, p_negative })
    }

    /// Softmax over the two per-class scores.
    pub fn from_scores(score_positive: f64, score_negative: f64) -> Self {
        let d = score_positive - score_negative;
        ProbVector { p_positive: logistic(d), p_negative: logistic(-d) }
    }

    /// Argmax; Positive wins exact ties.
    pub fn argmax(&self) -> SentimentLabel {
        if self.p_positive >= self.p_negative {
            SentimentLabel::Positive
        } else {
            SentimentLabel::Negative
        }
    }

    pub fn get(&self, label: SentimentLabel) -> f64 {
        match label {
            SentimentLabel::Positive => self.p_positive,
            _ => self.p_negative,
        }
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max of the two class probabilities.
pub fn confidence(p: &ProbVector) -> f64 {
    p.p_positive.max(p.p_negative)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub utterance_id: String,
    pub probs: ProbVector,
    pub predicted: SentimentLabel,
    pub confidence: f64,
}

impl Prediction {
    pub fn new(utterance_id: impl Into<String>, probs: ProbVector) -> Self {
        Prediction {
            utterance_id: utterance_id.into(),
            predicted: probs.argmax(),
            confidence: confidence(&probs),
            probs,
        }
    }
}

/// One pseudo-labeled utterance handed to a fine-tuning step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainExample {
    pub utterance_id: String,
    pub text: String,
    /// Token surfaces; the built-in model featurizes these, external peers see `text`.
    pub surfaces: Vec<String>,
    pub label: SentimentLabel,
}

impl TrainExample {
    pub fn from_utterance(u: &Utterance, label: SentimentLabel) -> Self {
        TrainExample {
            utterance_id: u.id.clone(),
            text: u.text.clone(),
            surfaces: u.surfaces().map(str::to_string).collect(),
            label,
        }
    }

    /// For peers that only receive text: surfaces are the whitespace-split text.
    pub fn from_text(utterance_id: impl Into<String>, text: &str, label: SentimentLabel) -> Self {
        TrainExample {
            utterance_id: utterance_id.into(),
            text: text.to_string(),
            surfaces: text.split_whitespace().map(str::to_string).collect(),
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub learning_rate: f64,
    /// Only external backends batch; the built-in model does plain per-example SGD.
    pub batch_size: usize,
    pub hash_dim: usize,
    pub ngram_max: usize,
    pub seed: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig { learning_rate: 0.05, batch_size: 16, hash_dim: 1 << 18, ngram_max: 2, seed: 0 }
    }
}

impl BackendConfig {
    pub const MIN_HASH_DIM: usize = 1 << 10;

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(BackendError::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !self.hash_dim.is_power_of_two() || self.hash_dim < Self::MIN_HASH_DIM {
            return Err(BackendError::Config(format!(
                "hash_dim must be a power of two >= {}, got {}",
                Self::MIN_HASH_DIM,
                self.hash_dim
            )));
        }
        if !(1..=2).contains(&self.ngram_max) {
            return Err(BackendError::Config(format!("ngram_max must be 1 or 2, got {}", self.ngram_max)));
        }
        if self.batch_size == 0 {
            return Err(BackendError::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// A trainable model that emits two-class probabilities.
pub trait ClassifierBackend {
    /// One prediction per input, in input order.
    fn predict_batch(&mut self, utterances: &[&Utterance]) -> Result<Vec<Prediction>, BackendError>;

    /// Fine-tunes on `examples` for `epochs` passes. An empty slice is a no-op.
    fn train(&mut self, examples: &[TrainExample], epochs: usize) -> Result<(), BackendError>;
}

impl<B: ClassifierBackend + ?Sized> ClassifierBackend for &mut B {
    fn predict_batch(&mut self, utterances: &[&Utterance]) -> Result<Vec<Prediction>, BackendError> {
        (**self).predict_batch(utterances)
    }

    fn train(&mut self, examples: &[TrainExample], epochs: usize) -> Result<(), BackendError> {
        (**self).train(examples, epochs)
    }
}

impl<B: ClassifierBackend + ?Sized> ClassifierBackend for Box<B> {
    fn predict_batch(&mut self, utterances: &[&Utterance]) -> Result<Vec<Prediction>, BackendError> {
        (**self).predict_batch(utterances)
    }

    fn train(&mut self, examples: &[TrainExample], epochs: usize) -> Result<(), BackendError> {
        (**self).train(examples, epochs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_two_and_zero() {
        let p = ProbVector::from_scores(2.0, 0.0);
        let expected = 2f64.exp() / (2f64.exp() + 1.0);
        assert!((p.p_positive - expected).abs() < 1e-9);
        assert!((p.p_positive - 0.8808).abs() < 1e-4);
        assert!((p.p_positive + p.p_negative - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_extreme_scores_stay_valid() {
        for d in [-800.0, -40.0, 0.0, 40.0, 800.0] {
            let p = ProbVector::from_scores(d, 0.0);
            assert!(ProbVector::new(p.p_positive, p.p_negative).is_some(), "{d}");
        }
    }

    #[test]
    fn tie_goes_to_positive() {
        let p = ProbVector::from_scores(0.0, 0.0);
        assert_eq!(p, ProbVector { p_positive: 0.5, p_negative: 0.5 });
        assert_eq!(p.argmax(), SentimentLabel::Positive);
        let pred = Prediction::new("x", p);
        assert_eq!(pred.predicted, SentimentLabel::Positive);
        assert_eq!(pred.confidence, 0.5);
    }

    #[test]
    fn confidence_is_max() {
        let c = |a, b| confidence(&ProbVector::new(a, b).unwrap());
        assert_eq!(c(0.9, 0.1), 0.9);
        assert_eq!(c(0.5, 0.5), 0.5);
        assert_eq!(c(0.3, 0.7), 0.7);
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new(0.6, 0.4).is_some());
        assert!(ProbVector::new(0.6, 0.5).is_none());
        assert!(ProbVector::new(1.2, -0.2).is_none());
        assert!(ProbVector::new(f64::NAN, 0.5).is_none());
    }

    #[test]
    fn config_validation() {
        assert!(BackendConfig::default().validate().is_ok());
        let bad = [
            BackendConfig { learning_rate: 0.0, ..Default::default() },
            BackendConfig { hash_dim: 1000, ..Default::default() },
            BackendConfig { hash_dim: 512, ..Default::default() },
            BackendConfig { ngram_max: 3, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
