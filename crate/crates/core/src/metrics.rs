//! Two-class scoring: confusion matrix, per-class precision/recall/F1,
//! support-weighted F1, and the pseudo-label accuracy curve.
//!
//! Undefined ratios (zero denominators) are scored as 0, the convention of the
//! common `classification_report` implementations.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SentimentLabel;
use crate::engine::PseudoLabel;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("gold and predicted sequences differ in length ({gold} vs {pred})")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("nothing to score")]
    Empty,
    #[error("label {0} is not one of the two scored classes")]
    NotTwoClass(SentimentLabel),
    #[error("no gold label for {} pseudo-labeled ids: {}", .0.len(), preview(.0))]
    MissingGold(Vec<String>),
}

fn preview(ids: &[String]) -> String {
    let mut s = ids.iter().take(10).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > 10 {
        s.push_str(", ...");
    }
    s
}

/// Counts indexed `[gold][predicted]`, Positive = 0, Negative = 1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 2]; 2],
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn get(&self, gold: SentimentLabel, pred: SentimentLabel) -> usize {
        match (gold.binary_index(), pred.binary_index()) {
            (Some(g), Some(p)) => self.counts[g][p],
            _ => 0,
        }
    }

    pub fn add(&mut self, gold: SentimentLabel, pred: SentimentLabel) -> Result<(), MetricsError> {
        let g = gold.binary_index().ok_or(MetricsError::NotTwoClass(gold))?;
        let p = pred.binary_index().ok_or(MetricsError::NotTwoClass(pred))?;
        self.counts[g][p] += 1;
        Ok(())
    }
}

pub fn confusion_matrix(gold: &[SentimentLabel], pred: &[SentimentLabel]) -> Result<ConfusionMatrix, MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::LengthMismatch { gold: gold.len(), pred: pred.len() });
    }
    if gold.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (&g, &p) in gold.iter().zip(pred) {
        cm.add(g, p)?;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub positive: ClassMetrics,
    pub negative: ClassMetrics,
    pub weighted_f1: f64,
    pub accuracy: f64,
}

impl ClassificationReport {
    pub fn class(&self, label: SentimentLabel) -> &ClassMetrics {
        match label {
            SentimentLabel::Positive => &self.positive,
            _ => &self.negative,
        }
    }

    /// Recall of a class, or `None` when it has no gold support.
    pub fn class_accuracy(&self, label: SentimentLabel) -> Option<f64> {
        let c = self.class(label);
        (c.support > 0).then_some(c.recall)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_metrics(cm: &ConfusionMatrix, c: usize) -> ClassMetrics {
    let tp = cm.counts[c][c];
    let support = cm.counts[c][0] + cm.counts[c][1];
    let predicted = cm.counts[0][c] + cm.counts[1][c];
    let precision = ratio(tp, predicted);
    let recall = ratio(tp, support);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    ClassMetrics { precision, recall, f1, support }
}

/// Panics if the matrix is empty; [`confusion_matrix`] never builds one.
pub fn report(cm: &ConfusionMatrix) -> ClassificationReport {
    let total = cm.total();
    assert!(total > 0, "report of an empty confusion matrix");
    let positive = class_metrics(cm, 0);
    let negative = class_metrics(cm, 1);
    let weighted_f1 = (positive.support as f64 * positive.f1 + negative.support as f64 * negative.f1) / total as f64;
    let accuracy = (cm.counts[0][0] + cm.counts[1][1]) as f64 / total as f64;
    ClassificationReport { positive, negative, weighted_f1, accuracy }
}

/// Convenience: `report(confusion_matrix(gold, pred))`.
pub fn score(gold: &[SentimentLabel], pred: &[SentimentLabel]) -> Result<ClassificationReport, MetricsError> {
    Ok(report(&confusion_matrix(gold, pred)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n_selected: usize,
    pub weighted_f1: f64,
    pub acc_positive: Option<f64>,
    pub acc_negative: Option<f64>,
}

/// Scores the cumulative pseudo-labeled pool against gold after each
/// iteration: point `i` covers every label assigned at iteration `<= i`.
pub fn algorithmic_curve(
    labels: &[PseudoLabel],
    gold: &HashMap<&str, SentimentLabel>,
) -> Result<Vec<CurvePoint>, MetricsError> {
    let missing: Vec<String> = labels
        .iter()
        .filter(|l| !gold.contains_key(l.utterance_id.as_str()))
        .map(|l| l.utterance_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingGold(missing));
    }
    let mut by_iteration: BTreeMap<usize, Vec<&PseudoLabel>> = BTreeMap::new();
    for l in labels {
        by_iteration.entry(l.iteration).or_default().push(l);
    }
    let mut cm = ConfusionMatrix::default();
    let mut n = 0;
    let mut points = Vec::with_capacity(by_iteration.len());
    for batch in by_iteration.values() {
        for l in batch {
            cm.add(gold[l.utterance_id.as_str()], l.label)?;
        }
        n += batch.len();
        let r = report(&cm);
        points.push(CurvePoint {
            n_selected: n,
            weighted_f1: r.weighted_f1,
            acc_positive: r.class_accuracy(SentimentLabel::Positive),
            acc_negative: r.class_accuracy(SentimentLabel::Negative),
        });
    }
    Ok(points)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV with header `n_selected,weighted_f1,acc_positive,acc_negative`;
/// undefined accuracies are empty fields.
pub fn write_curve_csv<W: Write>(points: &[CurvePoint], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["n_selected", "weighted_f1", "acc_positive", "acc_negative"])?;
    for p in points {
        out.write_record([p.n_selected.to_string(), p.weighted_f1.to_string(), opt(p.acc_positive), opt(p.acc_negative)])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use SentimentLabel::{Negative as N, Neutral, Positive as P};

    #[test]
    fn worked_fixture() {
        let cm = confusion_matrix(&[P, P, N], &[P, N, N]).unwrap();
        assert_eq!(cm.counts, [[1, 1], [0, 1]]);
        let r = report(&cm);
        assert!((r.positive.precision - 1.0).abs() < 1e-12);
        assert!((r.positive.recall - 0.5).abs() < 1e-12);
        assert!((r.negative.precision - 0.5).abs() < 1e-12);
        assert!((r.negative.recall - 1.0).abs() < 1e-12);
        assert!((r.positive.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.negative.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.weighted_f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn identical_sequences() {
        let cm = confusion_matrix(&[P, N, N, P], &[P, N, N, P]).unwrap();
        assert_eq!(cm.counts[0][1] + cm.counts[1][0], 0);
        let r = report(&cm);
        assert_eq!((r.weighted_f1, r.accuracy), (1.0, 1.0));
    }

    #[test]
    fn all_wrong() {
        let r = score(&[P, P, P], &[N, N, N]).unwrap();
        assert_eq!(r.accuracy, 0.0);
        assert_eq!(r.weighted_f1, 0.0);
    }

    #[test]
    fn absent_class_has_zero_weight() {
        let r = score(&[P, P], &[P, P]).unwrap();
        assert_eq!(r.negative.support, 0);
        assert_eq!(r.negative.f1, 0.0);
        assert_eq!(r.weighted_f1, 1.0);
    }

    #[test]
    fn errors() {
        assert_eq!(confusion_matrix(&[P], &[]), Err(MetricsError::LengthMismatch { gold: 1, pred: 0 }));
        assert_eq!(confusion_matrix(&[], &[]), Err(MetricsError::Empty));
        assert_eq!(confusion_matrix(&[Neutral], &[P]), Err(MetricsError::NotTwoClass(Neutral)));
    }

    fn pl(id: &str, label: SentimentLabel, iteration: usize) -> PseudoLabel {
        PseudoLabel { utterance_id: id.into(), label, confidence: 0.9, iteration }
    }

    #[test]
    fn curve_first_point_from_four_items() {
        let gold: HashMap<&str, SentimentLabel> = [("a", P), ("b", P), ("c", N), ("d", N), ("e", P)].into_iter().collect();
        let labels = vec![pl("a", P, 0), pl("b", P, 0), pl("c", N, 0), pl("d", P, 0), pl("e", P, 1)];
        let curve = algorithmic_curve(&labels, &gold).unwrap();
        assert_eq!(curve.len(), 2);
        // iteration 0: gold [P,P,N,N] pred [P,P,N,P]
        let expected = score(&[P, P, N, N], &[P, P, N, P]).unwrap();
        assert_eq!(curve[0].n_selected, 4);
        assert!((curve[0].weighted_f1 - expected.weighted_f1).abs() < 1e-12);
        // P: prec 2/3 rec 1 f1 0.8; N: prec 1 rec 0.5 f1 2/3; weighted (0.8*2 + 2/3*2)/4
        assert!((curve[0].weighted_f1 - (0.8 * 2.0 + 2.0 / 3.0 * 2.0) / 4.0).abs() < 1e-12);
        assert_eq!(curve[0].acc_negative, Some(0.5));
        assert_eq!(curve[1].n_selected, 5);
    }

    #[test]
    fn curve_single_perfect_iteration() {
        let gold: HashMap<&str, SentimentLabel> = [("a", P), ("b", N)].into_iter().collect();
        let curve = algorithmic_curve(&[pl("a", P, 0), pl("b", N, 0)], &gold).unwrap();
        assert_eq!(curve.len(), 1);
        assert_eq!(curve[0].weighted_f1, 1.0);
    }

    #[test]
    fn curve_missing_gold() {
        let gold: HashMap<&str, SentimentLabel> = HashMap::new();
        match algorithmic_curve(&[pl("x", P, 0)], &gold) {
            Err(MetricsError::MissingGold(ids)) => assert_eq!(ids, vec!["x"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn curve_csv_header() {
        let mut buf = Vec::new();
        let pts = [CurvePoint { n_selected: 4, weighted_f1: 0.5, acc_positive: Some(1.0), acc_negative: None }];
        write_curve_csv(&pts, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "n_selected,weighted_f1,acc_positive,acc_negative\n4,0.5,1,\n");
    }
}
