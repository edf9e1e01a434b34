//! Hashed n-gram softmax linear classifier trained with plain SGD.
//!
//! Weights are laid out class-major: `[positive: hash_dim + 1][negative: hash_dim + 1]`,
//! where the last slot of each block is that class's bias.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{featurize, featurize_surfaces, BackendConfig, BackendError, ClassifierBackend, FeatureSet, Prediction, ProbVector, TrainExample};
use crate::corpus::{Corpus, SentimentLabel, Utterance};

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltinModel {
    config: BackendConfig,
    weights: Vec<f64>,
    train_calls: u64,
}

impl BuiltinModel {
    /// A zero-weight model: every prediction is (0.5, 0.5).
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let weights = vec![0.0; 2 * (config.hash_dim + 1)];
        Ok(BuiltinModel { config, weights, train_calls: 0 })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<(), BackendError> {
        if weights.len() != self.weights.len() {
            return Err(BackendError::Config(format!(
                "expected {} weights, got {}",
                self.weights.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(BackendError::Numeric);
        }
        self.weights = weights;
        Ok(())
    }

    fn stride(&self) -> usize {
        self.config.hash_dim + 1
    }

    fn class_offset(&self, label: SentimentLabel) -> usize {
        match label {
            SentimentLabel::Positive => 0,
            _ => self.stride(),
        }
    }

    /// Per-class linear scores (positive, negative).
    pub fn scores(&self, fs: &FeatureSet) -> (f64, f64) {
        let neg = self.stride();
        fs.indices().iter().fold((0.0, 0.0), |(p, n), &i| {
            let i = i as usize;
            (p + self.weights[i], n + self.weights[neg + i])
        })
    }

    pub fn probs(&self, fs: &FeatureSet) -> ProbVector {
        let (p, n) = self.scores(fs);
        ProbVector::from_scores(p, n)
    }

    pub fn predict_one(&self, u: &Utterance) -> Prediction {
        Prediction::new(u.id.clone(), self.probs(&featurize(u, &self.config)))
    }

    /// Read-only prediction; safe to call from several threads on a shared model.
    pub fn predict(&self, utterances: &[&Utterance]) -> Vec<Prediction> {
        utterances.iter().map(|u| self.predict_one(u)).collect()
    }

    fn example_features(&self, ex: &TrainExample) -> FeatureSet {
        featurize_surfaces(ex.surfaces.iter().map(String::as_str), &self.config)
    }

    /// Mean softmax cross-entropy over `examples`.
    pub fn loss(&self, examples: &[TrainExample]) -> f64 {
        if examples.is_empty() {
            return 0.0;
        }
        let total: f64 = examples
            .iter()
            .map(|ex| {
                let (p, n) = self.scores(&self.example_features(ex));
                let m = p.max(n);
                let lse = m + ((p - m).exp() + (n - m).exp()).ln();
                let target = if ex.label == SentimentLabel::Positive { p } else { n };
                lse - target
            })
            .sum();
        total / examples.len() as f64
    }

    /// Dense gradient of [`loss`](Self::loss) with respect to the weights.
    pub fn gradient(&self, examples: &[TrainExample]) -> Vec<f64> {
        let mut grad = vec![0.0; self.weights.len()];
        if examples.is_empty() {
            return grad;
        }
        let scale = 1.0 / examples.len() as f64;
        for ex in examples {
            let fs = self.example_features(ex);
            let probs = self.probs(&fs);
            for label in SentimentLabel::BINARY {
                let y = if ex.label == label { 1.0 } else { 0.0 };
                let g = (probs.get(label) - y) * scale;
                let off = self.class_offset(label);
                for &i in fs.indices() {
                    grad[off + i as usize] += g;
                }
            }
        }
        grad
    }

    fn sgd_step(&mut self, fs: &FeatureSet, label: SentimentLabel) -> bool {
        let probs = self.probs(fs);
        let lr = self.config.learning_rate;
        let mut finite = true;
        for class in SentimentLabel::BINARY {
            let y = if class == label { 1.0 } else { 0.0 };
            let g = probs.get(class) - y;
            let off = self.class_offset(class);
            for &i in fs.indices() {
                let w = &mut self.weights[off + i as usize];
                *w -= lr * g;
                finite &= w.is_finite();
            }
        }
        finite
    }

    /// `epochs` SGD passes over a seed-shuffled order. Each call draws a fresh
    /// but reproducible order from (seed, number of previous calls).
    pub fn fit(&mut self, examples: &[TrainExample], epochs: usize) -> Result<(), BackendError> {
        if examples.is_empty() {
            return Ok(());
        }
        if epochs == 0 {
            return Err(BackendError::Config("epochs must be at least 1".into()));
        }
        if let Some(ex) = examples.iter().find(|ex| !ex.label.is_binary()) {
            return Err(BackendError::NonBinaryLabel(ex.utterance_id.clone()));
        }
        let features: Vec<FeatureSet> = examples.iter().map(|ex| self.example_features(ex)).collect();
        let stream = self.config.seed ^ self.train_calls.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        self.train_calls += 1;

        let mut order: Vec<usize> = (0..examples.len()).collect();
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            for &k in &order {
                if !self.sgd_step(&features[k], examples[k].label) {
                    return Err(BackendError::Numeric);
                }
            }
        }
        Ok(())
    }

    /// Supervised pre-training on the gold labels of a source corpus; this is
    /// what makes the model a usable zero-shot initializer. Neutral and
    /// unlabeled utterances are skipped.
    pub fn pretrain(&mut self, source: &Corpus, epochs: usize) -> Result<(), BackendError> {
        let examples: Vec<TrainExample> = source
            .iter()
            .filter_map(|u| match u.gold {
                Some(g) if g.is_binary() => Some(TrainExample::from_utterance(u, g)),
                _ => None,
            })
            .collect();
        self.fit(&examples, epochs)
    }
}

impl ClassifierBackend for BuiltinModel {
    fn predict_batch(&mut self, utterances: &[&Utterance]) -> Result<Vec<Prediction>, BackendError> {
        Ok(self.predict(utterances))
    }

    fn train(&mut self, examples: &[TrainExample], epochs: usize) -> Result<(), BackendError> {
        self.fit(examples, epochs)
    }
}
