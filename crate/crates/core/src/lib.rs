//! Unsupervised self-training for sentiment classification of code-switched text.
//!
//! A pre-trained classifier labels an unlabeled corpus zero-shot; the most
//! confident predictions per class become pseudo-labels, the model is fine-tuned
//! on them for a single epoch, and the cycle repeats on the remaining pool until
//! the corpus is exhausted or a class-ratio stopping rule fires. No gold label
//! ever enters training; gold labels are only read by [`metrics`] and
//! [`analysis`].
//!
//! Module map:
//!
//! - [`corpus`]: utterances with per-token language tags, the two input
//!   formats, preprocessing and the synthetic corpus generator.
//! - [`backend`]: the classifier contract, the built-in hashed n-gram softmax
//!   model and the line-delimited JSON client for external models.
//! - [`selection`]: per-class confidence ranking, ratio estimation and stopping.
//! - [`engine`]: the outer loop and pseudo-label export.
//! - [`metrics`]: weighted F1 / accuracy and the algorithmic curve.
//! - [`analysis`]: token-ratio buckets and distribution comparison.
//! - [`config`]: the JSON run configuration.

pub mod analysis;
pub mod backend;
pub mod config;
pub mod corpus;
pub mod engine;
pub mod metrics;
pub mod selection;

pub use backend::{
    BackendConfig, BackendError, BuiltinModel, ClassifierBackend, ExternalBackend, Prediction,
    ProbVector, TrainExample,
};
pub use config::RunConfig;
pub use corpus::{Corpus, CorpusError, LangTag, SentimentLabel, SyntheticSpec, Token, Utterance};
pub use engine::{EngineConfig, EngineError, PseudoLabel, RunResult, RunState, StopReason};
pub use metrics::{ClassificationReport, ConfusionMatrix};
pub use selection::{RatioEstimate, SelectionOutcome, SelectionStrategy};
