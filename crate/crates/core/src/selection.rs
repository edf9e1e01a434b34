//! The selection block: which predictions become pseudo-labels, how the class
//! ratio is estimated from a small annotated sample, and when to stop.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::token_ratio;
use crate::backend::Prediction;
use crate::corpus::{Corpus, SentimentLabel, Utterance};

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("invalid selection config: {0}")]
    Config(String),
    #[error("utterance {0:?} predicted more than once")]
    DuplicatePrediction(String),
    #[error("prediction for {0:?} does not resolve in the corpus")]
    UnknownUtterance(String),
    #[error("ratio estimation aborted: {0}")]
    EstimationAborted(String),
}

/// Shape of the per-iteration request inside a schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScheduleShape {
    Vanilla,
    Ratio { positive_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectionStrategy {
    /// `n_total / 2` (floored) per class.
    Vanilla { n_total: usize },
    /// `round(n_total * positive_fraction)` positives, the rest negatives.
    Ratio { positive_fraction: f64, n_total: usize },
    /// Iteration `i` uses `per_iteration[i]` as its total; the last entry repeats.
    Scheduled { per_iteration: Vec<usize>, inner: ScheduleShape },
    /// Restricts the candidate pool to utterances with L2 token ratio at least
    /// `min_l2_ratio`; utterances without words are never eligible.
    TokenRatioFiltered { min_l2_ratio: f64, inner: Box<SelectionStrategy> },
}

fn check_fraction(f: f64) -> Result<(), SelectionError> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(SelectionError::Config(format!("positive_fraction must be in (0,1), got {f}")))
    }
}

fn check_total(n: usize) -> Result<(), SelectionError> {
    if n >= 2 {
        Ok(())
    } else {
        Err(SelectionError::Config(format!("n_total must be at least 2, got {n}")))
    }
}

impl SelectionStrategy {
    pub fn validate(&self) -> Result<(), SelectionError> {
        match self {
            SelectionStrategy::Vanilla { n_total } => check_total(*n_total),
            SelectionStrategy::Ratio { positive_fraction, n_total } => {
                check_fraction(*positive_fraction)?;
                check_total(*n_total)
            }
            SelectionStrategy::Scheduled { per_iteration, inner } => {
                if per_iteration.is_empty() {
                    return Err(SelectionError::Config("schedule must have at least one entry".into()));
                }
                if let ScheduleShape::Ratio { positive_fraction } = inner {
                    check_fraction(*positive_fraction)?;
                }
                Ok(())
            }
            SelectionStrategy::TokenRatioFiltered { min_l2_ratio, inner } => {
                if min_l2_ratio.is_nan() {
                    return Err(SelectionError::Config("min_l2_ratio is NaN".into()));
                }
                inner.validate()
            }
        }
    }

    /// Per-class request (positive, negative) at `iteration` (0 = zero-shot round).
    pub fn requests(&self, iteration: usize) -> (usize, usize) {
        match self {
            SelectionStrategy::Vanilla { n_total } => vanilla_requests(*n_total),
            SelectionStrategy::Ratio { positive_fraction, n_total } => ratio_requests(*positive_fraction, *n_total),
            SelectionStrategy::Scheduled { per_iteration, inner } => {
                let n = per_iteration[iteration.min(per_iteration.len() - 1)];
                match inner {
                    ScheduleShape::Vanilla => vanilla_requests(n),
                    ScheduleShape::Ratio { positive_fraction } => ratio_requests(*positive_fraction, n),
                }
            }
            SelectionStrategy::TokenRatioFiltered { inner, .. } => inner.requests(iteration),
        }
    }

    /// Applies the strategy to one round of predictions.
    pub fn select(&self, preds: &[Prediction], corpus: &Corpus, iteration: usize) -> Result<SelectionOutcome, SelectionError> {
        self.validate()?;
        match self {
            SelectionStrategy::TokenRatioFiltered { min_l2_ratio, inner } => {
                select_token_ratio_filtered(preds, corpus, *min_l2_ratio, inner, iteration)
            }
            _ => {
                let (p, n) = self.requests(iteration);
                select_per_class(preds, p, n)
            }
        }
    }
}

fn vanilla_requests(n_total: usize) -> (usize, usize) {
    (n_total / 2, n_total / 2)
}

fn ratio_requests(positive_fraction: f64, n_total: usize) -> (usize, usize) {
    // f64::round rounds half away from zero
    let n_pos = ((n_total as f64) * positive_fraction).round() as usize;
    let n_pos = n_pos.min(n_total);
    (n_pos, n_total - n_pos)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selected {
    pub utterance_id: String,
    pub label: SentimentLabel,
    pub confidence: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    /// Positives in rank order, then negatives in rank order.
    pub selected: Vec<Selected>,
    pub requested_positive: usize,
    pub requested_negative: usize,
    pub shortfall_positive: usize,
    pub shortfall_negative: usize,
}

impl SelectionOutcome {
    pub fn count(&self, label: SentimentLabel) -> usize {
        self.selected.iter().filter(|s| s.label == label).count()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    /// Keeps at most `max_positive` / `max_negative` of the top-ranked items per class.
    pub fn truncate(&mut self, max_positive: usize, max_negative: usize) {
        let (mut p, mut n) = (0, 0);
        self.selected.retain(|s| {
            let (seen, cap) = match s.label {
                SentimentLabel::Positive => (&mut p, max_positive),
                _ => (&mut n, max_negative),
            };
            *seen += 1;
            *seen <= cap
        });
    }
}

/// Descending confidence, ascending id on ties.
fn rank(a: &Prediction, b: &Prediction) -> Ordering {
    b.confidence.total_cmp(&a.confidence).then_with(|| a.utterance_id.cmp(&b.utterance_id))
}

fn select_per_class(preds: &[Prediction], n_pos: usize, n_neg: usize) -> Result<SelectionOutcome, SelectionError> {
    let mut seen = HashSet::with_capacity(preds.len());
    for p in preds {
        if !seen.insert(p.utterance_id.as_str()) {
            return Err(SelectionError::DuplicatePrediction(p.utterance_id.clone()));
        }
    }
    let mut outcome = SelectionOutcome {
        requested_positive: n_pos,
        requested_negative: n_neg,
        ..SelectionOutcome::default()
    };
    for (label, want) in [(SentimentLabel::Positive, n_pos), (SentimentLabel::Negative, n_neg)] {
        let mut pool: Vec<&Prediction> = preds.iter().filter(|p| p.predicted == label).collect();
        pool.sort_by(|a, b| rank(a, b));
        let take = want.min(pool.len());
        outcome.selected.extend(pool[..take].iter().map(|p| Selected {
            utterance_id: p.utterance_id.clone(),
            label,
            confidence: p.confidence,
        }));
        let short = want - take;
        match label {
            SentimentLabel::Positive => outcome.shortfall_positive = short,
            _ => outcome.shortfall_negative = short,
        }
    }
    Ok(outcome)
}

/// The top `n_total / 2` most confident predictions of each class.
pub fn select_vanilla(preds: &[Prediction], n_total: usize) -> Result<SelectionOutcome, SelectionError> {
    check_total(n_total)?;
    let (p, n) = vanilla_requests(n_total);
    select_per_class(preds, p, n)
}

pub fn select_ratio(preds: &[Prediction], positive_fraction: f64, n_total: usize) -> Result<SelectionOutcome, SelectionError> {
    check_fraction(positive_fraction)?;
    check_total(n_total)?;
    let (p, n) = ratio_requests(positive_fraction, n_total);
    select_per_class(preds, p, n)
}

pub fn select_token_ratio_filtered(
    preds: &[Prediction],
    corpus: &Corpus,
    min_l2_ratio: f64,
    inner: &SelectionStrategy,
    iteration: usize,
) -> Result<SelectionOutcome, SelectionError> {
    let mut eligible = Vec::with_capacity(preds.len());
    for p in preds {
        let u = corpus
            .get(&p.utterance_id)
            .ok_or_else(|| SelectionError::UnknownUtterance(p.utterance_id.clone()))?;
        if token_ratio(u).is_some_and(|r| r >= min_l2_ratio) {
            eligible.push(p.clone());
        }
    }
    inner.select(&eligible, corpus, iteration)
}

/// Estimated class balance of a dataset from a small annotated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub p_positive_hat: f64,
    pub sample_size: usize,
    pub dataset_size: usize,
    pub expected_positive: usize,
    pub expected_negative: usize,
}

impl RatioEstimate {
    pub fn from_counts(positive: usize, sample_size: usize, dataset_size: usize) -> Self {
        assert!(sample_size > 0 && positive <= sample_size);
        let p_hat = positive as f64 / sample_size as f64;
        let expected_positive = ((p_hat * dataset_size as f64).round() as usize).min(dataset_size);
        RatioEstimate {
            p_positive_hat: p_hat,
            sample_size,
            dataset_size,
            expected_positive,
            expected_negative: dataset_size - expected_positive,
        }
    }

    pub fn expected(&self, label: SentimentLabel) -> usize {
        match label {
            SentimentLabel::Positive => self.expected_positive,
            _ => self.expected_negative,
        }
    }
}

/// Supplies a Positive/Negative judgement for each sampled utterance.
pub trait Annotator {
    /// `position` is 1-based within the sample of size `k`. `Err` aborts the estimate.
    fn annotate(&mut self, position: usize, k: usize, u: &Utterance) -> Result<SentimentLabel, String>;
}

/// Answers with the corpus's gold labels. For tests and offline evaluation only.
#[derive(Debug, Clone, Copy, Default)]
pub struct GoldOracle;

impl Annotator for GoldOracle {
    fn annotate(&mut self, _position: usize, _k: usize, u: &Utterance) -> Result<SentimentLabel, String> {
        match u.gold {
            Some(g) if g.is_binary() => Ok(g),
            _ => Err(format!("utterance {:?} has no two-class gold label", u.id)),
        }
    }
}

/// Draws `k` utterances uniformly without replacement and asks the annotator
/// about each.
pub fn estimate_ratio(
    corpus: &Corpus,
    k: usize,
    seed: u64,
    annotator: &mut dyn Annotator,
) -> Result<RatioEstimate, SelectionError> {
    if k == 0 {
        return Err(SelectionError::Config("sample size k must be positive".into()));
    }
    if k > corpus.len() {
        return Err(SelectionError::Config(format!("sample size {k} exceeds corpus size {}", corpus.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = rand::seq::index::sample(&mut rng, corpus.len(), k);
    let mut positive = 0;
    for (i, idx) in sample.iter().enumerate() {
        let u = &corpus.utterances()[idx];
        let label = annotator.annotate(i + 1, k, u).map_err(SelectionError::EstimationAborted)?;
        match label {
            SentimentLabel::Positive => positive += 1,
            SentimentLabel::Negative => {}
            SentimentLabel::Neutral => {
                return Err(SelectionError::EstimationAborted(format!("neutral annotation for {:?}", u.id)))
            }
        }
    }
    Ok(RatioEstimate::from_counts(positive, k, corpus.len()))
}

/// Why a run ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StopReason {
    Exhausted,
    RatioStop { class: SentimentLabel },
    MaxIterations,
    NumericAbort,
    BackendLost { message: String },
}

impl StopReason {
    /// Exhaustion, ratio-stop and the iteration cap end a run normally.
    pub fn is_clean(&self) -> bool {
        matches!(self, StopReason::Exhausted | StopReason::RatioStop { .. } | StopReason::MaxIterations)
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopReason::Exhausted => f.write_str("exhausted"),
            StopReason::RatioStop { class } => write!(f, "ratio-stop({class})"),
            StopReason::MaxIterations => f.write_str("max-iterations"),
            StopReason::NumericAbort => f.write_str("numeric-abort"),
            StopReason::BackendLost { message } => write!(f, "backend-lost: {message}"),
        }
    }
}

/// Stops on an empty pool first, then when either class's cumulative
/// selections reach its expected total. A class expected to have zero members
/// never triggers the ratio rule.
pub fn should_stop(
    cumulative_positive: usize,
    cumulative_negative: usize,
    estimate: Option<&RatioEstimate>,
    unlabeled_remaining: usize,
) -> Option<StopReason> {
    if unlabeled_remaining == 0 {
        return Some(StopReason::Exhausted);
    }
    let est = estimate?;
    for (class, cum) in [(SentimentLabel::Positive, cumulative_positive), (SentimentLabel::Negative, cumulative_negative)] {
        let quota = est.expected(class);
        if quota > 0 && cum >= quota {
            return Some(StopReason::RatioStop { class });
        }
    }
    None
}
