//! Code-mixing analysis: L2 token ratio, 0.1-wide ratio buckets, per-bucket
//! performance and class/bucket distribution comparison.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, SentimentLabel, Utterance};
use crate::metrics::{report, ClassificationReport, ConfusionMatrix};

pub const BUCKETS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("label for {0:?} does not resolve in the corpus")]
    UnknownId(String),
    #[error("label {label} for {id:?} is not one of the two classes")]
    NotTwoClass { id: String, label: SentimentLabel },
    #[error("distributions cover different numbers of utterances ({0} vs {1})")]
    Mismatch(usize, usize),
    #[error("gold and predicted sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// Fraction of L2 words among L1 and L2 words; `None` when there are no words.
pub fn token_ratio(u: &Utterance) -> Option<f64> {
    let (l1, l2) = u.word_counts();
    let words = l1 + l2;
    (words > 0).then(|| l2 as f64 / words as f64)
}

/// Bucket `i` holds ratios in `[i/10, (i+1)/10)`; the last bucket also holds 1.0.
pub fn bucket_index(ratio: f64) -> usize {
    // small epsilon so e.g. 0.3 computed as 3/10 never lands in bucket 2
    ((ratio * BUCKETS as f64 + 1e-9).floor().max(0.0) as usize).min(BUCKETS - 1)
}

/// Bucket of an utterance computed from integer counts.
pub fn utterance_bucket(u: &Utterance) -> Option<usize> {
    let (l1, l2) = u.word_counts();
    let words = l1 + l2;
    (words > 0).then(|| (BUCKETS * l2 / words).min(BUCKETS - 1))
}

pub fn bucket_lo(index: usize) -> f64 {
    index as f64 / BUCKETS as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub index: usize,
    /// Utterances whose ratio falls in this bucket.
    pub count: usize,
    /// Over members with both a gold label and a prediction.
    pub report: Option<ClassificationReport>,
    pub acc_positive: Option<f64>,
    pub acc_negative: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketPerformance {
    /// Non-empty buckets in ascending order.
    pub buckets: Vec<BucketStats>,
    pub undefined_count: usize,
    pub undefined_report: Option<ClassificationReport>,
}

impl BucketPerformance {
    /// Mean weighted F1 over scored buckets whose lower edge is at least `min_lo`.
    pub fn mean_weighted_f1_from(&self, min_lo: f64) -> Option<f64> {
        let scores: Vec<f64> = self
            .buckets
            .iter()
            .filter(|b| bucket_lo(b.index) >= min_lo - 1e-12)
            .filter_map(|b| b.report.map(|r| r.weighted_f1))
            .collect();
        (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
    }
}

fn finish(cm: &ConfusionMatrix) -> (Option<ClassificationReport>, Option<f64>, Option<f64>) {
    if cm.total() == 0 {
        return (None, None, None);
    }
    let r = report(cm);
    (Some(r), r.class_accuracy(SentimentLabel::Positive), r.class_accuracy(SentimentLabel::Negative))
}

/// Partitions the corpus by token-ratio bucket and scores `predictions`
/// against gold within each bucket. Utterances without a two-class gold label
/// or without a prediction count towards membership but are not scored.
pub fn bucket_performance(corpus: &Corpus, predictions: &HashMap<&str, SentimentLabel>) -> BucketPerformance {
    let mut counts = [0usize; BUCKETS];
    let mut cms = [ConfusionMatrix::default(); BUCKETS];
    let mut undefined_count = 0;
    let mut undefined_cm = ConfusionMatrix::default();
    for u in corpus {
        let scored = match (u.gold, predictions.get(u.id.as_str())) {
            (Some(g), Some(&p)) if g.is_binary() && p.is_binary() => Some((g, p)),
            _ => None,
        };
        let cm = match utterance_bucket(u) {
            Some(b) => {
                counts[b] += 1;
                &mut cms[b]
            }
            None => {
                undefined_count += 1;
                &mut undefined_cm
            }
        };
        if let Some((g, p)) = scored {
            cm.add(g, p).expect("both labels are binary");
        }
    }
    let buckets = (0..BUCKETS)
        .filter(|&i| counts[i] > 0)
        .map(|i| {
            let (report, acc_positive, acc_negative) = finish(&cms[i]);
            BucketStats { index: i, count: counts[i], report, acc_positive, acc_negative }
        })
        .collect();
    BucketPerformance { buckets, undefined_count, undefined_report: finish(&undefined_cm).0 }
}

/// Per-class histograms over token-ratio buckets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub positive: [usize; BUCKETS],
    pub negative: [usize; BUCKETS],
    pub undefined_positive: usize,
    pub undefined_negative: usize,
}

impl DistributionSummary {
    pub fn histogram(&self, label: SentimentLabel) -> &[usize; BUCKETS] {
        match label {
            SentimentLabel::Positive => &self.positive,
            _ => &self.negative,
        }
    }

    pub fn class_count(&self, label: SentimentLabel) -> usize {
        let undefined = match label {
            SentimentLabel::Positive => self.undefined_positive,
            _ => self.undefined_negative,
        };
        self.histogram(label).iter().sum::<usize>() + undefined
    }

    pub fn total(&self) -> usize {
        self.class_count(SentimentLabel::Positive) + self.class_count(SentimentLabel::Negative)
    }

    /// Mean bucket index of a class's defined-ratio members.
    pub fn mean_bucket(&self, label: SentimentLabel) -> Option<f64> {
        let h = self.histogram(label);
        let n: usize = h.iter().sum();
        (n > 0).then(|| h.iter().enumerate().map(|(i, &c)| i * c).sum::<usize>() as f64 / n as f64)
    }

    fn cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.positive
            .iter()
            .chain(self.negative.iter())
            .copied()
            .chain([self.undefined_positive, self.undefined_negative])
    }
}

/// Histograms of `labels` (gold or predicted) over the buckets of the
/// utterances they refer to.
pub fn prediction_distribution(
    corpus: &Corpus,
    labels: &HashMap<&str, SentimentLabel>,
) -> Result<DistributionSummary, AnalysisError> {
    let mut s = DistributionSummary::default();
    let mut entries: Vec<(&&str, &SentimentLabel)> = labels.iter().collect();
    entries.sort();
    for (&id, &label) in entries {
        let u = corpus.get(id).ok_or_else(|| AnalysisError::UnknownId(id.to_string()))?;
        if !label.is_binary() {
            return Err(AnalysisError::NotTwoClass { id: id.to_string(), label });
        }
        let positive = label == SentimentLabel::Positive;
        match (utterance_bucket(u), positive) {
            (Some(b), true) => s.positive[b] += 1,
            (Some(b), false) => s.negative[b] += 1,
            (None, true) => s.undefined_positive += 1,
            (None, false) => s.undefined_negative += 1,
        }
    }
    Ok(s)
}

/// Gold-label distribution of every two-class utterance in the corpus.
pub fn gold_distribution(corpus: &Corpus) -> DistributionSummary {
    let gold: HashMap<&str, SentimentLabel> = corpus.gold_map().into_iter().filter(|(_, g)| g.is_binary()).collect();
    prediction_distribution(corpus, &gold).expect("gold ids resolve and are binary")
}

/// Total-variation distance between the joint (class, bucket) distributions.
/// Both summaries must cover the same number of utterances.
pub fn tv_distance(a: &DistributionSummary, b: &DistributionSummary) -> Result<f64, AnalysisError> {
    let (na, nb) = (a.total(), b.total());
    if na != nb {
        return Err(AnalysisError::Mismatch(na, nb));
    }
    if na == 0 {
        return Ok(0.0);
    }
    let diff: usize = a.cells().zip(b.cells()).map(|(x, y)| x.abs_diff(y)).sum();
    Ok(0.5 * diff as f64 / na as f64)
}

/// Accuracy restricted to gold-positive and to gold-negative items.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClasswiseAccuracy {
    pub positive: Option<f64>,
    pub negative: Option<f64>,
}

pub fn classwise_accuracy(gold: &[SentimentLabel], pred: &[SentimentLabel]) -> Result<ClasswiseAccuracy, AnalysisError> {
    if gold.len() != pred.len() {
        return Err(AnalysisError::LengthMismatch(gold.len(), pred.len()));
    }
    let mut hits = [0usize; 2];
    let mut totals = [0usize; 2];
    for (i, (&g, &p)) in gold.iter().zip(pred).enumerate() {
        let gi = g.binary_index().ok_or(AnalysisError::NotTwoClass { id: i.to_string(), label: g })?;
        if !p.is_binary() {
            return Err(AnalysisError::NotTwoClass { id: i.to_string(), label: p });
        }
        totals[gi] += 1;
        if g == p {
            hits[gi] += 1;
        }
    }
    let acc = |c: usize| (totals[c] > 0).then(|| hits[c] as f64 / totals[c] as f64);
    Ok(ClasswiseAccuracy { positive: acc(0), negative: acc(1) })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `bucket_lo,count,weighted_f1,acc_positive,acc_negative`, one row per non-empty bucket.
pub fn write_bucket_csv<W: Write>(perf: &BucketPerformance, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["bucket_lo", "count", "weighted_f1", "acc_positive", "acc_negative"])?;
    for b in &perf.buckets {
        out.write_record([
            format!("{:.1}", bucket_lo(b.index)),
            b.count.to_string(),
            opt(b.report.map(|r| r.weighted_f1)),
            opt(b.acc_positive),
            opt(b.acc_negative),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `bucket_lo,count_positive,count_negative`, all ten buckets.
pub fn write_histogram_csv<W: Write>(s: &DistributionSummary, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["bucket_lo", "count_positive", "count_negative"])?;
    for i in 0..BUCKETS {
        out.write_record([format!("{:.1}", bucket_lo(i)), s.positive[i].to_string(), s.negative[i].to_string()])?;
    }
    out.flush()?;
    Ok(())
}
