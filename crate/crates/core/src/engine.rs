//! The self-training loop: zero-shot initialization, then repeated
//! fine-tune → predict → select rounds until the pool empties, a class
//! reaches its estimated total, or the iteration cap is hit.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ClassifierBackend, Prediction, TrainExample};
use crate::corpus::{Corpus, SentimentLabel, Utterance};
use crate::metrics::{self, ClassificationReport, ConfusionMatrix};
use crate::selection::{should_stop, RatioEstimate, SelectionError, SelectionOutcome, SelectionStrategy};

pub use crate::selection::StopReason;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
}

impl EngineError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        EngineError::Io { path: path.to_path_buf(), source }
    }
}

/// The engine's own annotation of one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseudoLabel {
    #[serde(rename = "id")]
    pub utterance_id: String,
    pub label: SentimentLabel,
    pub confidence: f64,
    /// 0 for the zero-shot round.
    pub iteration: usize,
}

/// Fully resolved loop settings (selection counts already absolute).
#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub strategy: SelectionStrategy,
    pub epochs_per_iteration: usize,
    pub max_iterations: Option<usize>,
    pub ratio_estimate: Option<RatioEstimate>,
    /// Retrain on the whole labeled pool each round instead of only the newest batch.
    pub cumulative_retraining: bool,
    /// Train on the last selected batch once the loop stops, so every labeled
    /// utterance has been seen exactly once.
    pub final_fine_tune: bool,
}

impl EngineConfig {
    pub fn new(strategy: SelectionStrategy) -> Self {
        EngineConfig {
            strategy,
            epochs_per_iteration: 1,
            max_iterations: None,
            ratio_estimate: None,
            cumulative_retraining: false,
            final_fine_tune: true,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        self.strategy.validate()?;
        if self.epochs_per_iteration == 0 {
            return Err(EngineError::Config("epochs_per_iteration must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldoutScore {
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub acc_positive: Option<f64>,
    pub acc_negative: Option<f64>,
}

impl From<ClassificationReport> for HeldoutScore {
    fn from(r: ClassificationReport) -> Self {
        HeldoutScore {
            weighted_f1: r.weighted_f1,
            accuracy: r.accuracy,
            acc_positive: r.class_accuracy(SentimentLabel::Positive),
            acc_negative: r.class_accuracy(SentimentLabel::Negative),
        }
    }
}

/// One selection round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub requested_positive: usize,
    pub requested_negative: usize,
    pub selected_positive: usize,
    pub selected_negative: usize,
    pub shortfall_positive: usize,
    pub shortfall_negative: usize,
    pub cumulative_positive: usize,
    pub cumulative_negative: usize,
    pub unlabeled_remaining: usize,
    /// Held-out score of the model that produced this round's predictions.
    pub heldout: Option<HeldoutScore>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    /// Index of the latest selection round.
    pub iteration: usize,
    pub labeled: BTreeMap<String, PseudoLabel>,
    /// In corpus order.
    pub unlabeled: Vec<String>,
    pub cumulative_positive: usize,
    pub cumulative_negative: usize,
    pub history: Vec<IterationRecord>,
    /// Selected but not yet trained on.
    pub pending: Vec<String>,
    pub stopped: Option<StopReason>,
    /// Full-corpus predictions of the initial model.
    pub zero_shot: Vec<Prediction>,
    /// Held-out score after the run, when a held-out corpus was given.
    pub final_heldout: Option<HeldoutScore>,
}

impl RunState {
    fn new(corpus: &Corpus) -> Self {
        RunState {
            iteration: 0,
            labeled: BTreeMap::new(),
            unlabeled: corpus.iter().map(|u| u.id.clone()).collect(),
            cumulative_positive: 0,
            cumulative_negative: 0,
            history: Vec::new(),
            pending: Vec::new(),
            stopped: None,
            zero_shot: Vec::new(),
            final_heldout: None,
        }
    }

    pub fn rounds(&self) -> usize {
        self.history.len()
    }

    /// Labels sorted by (iteration, id).
    pub fn sorted_labels(&self) -> Vec<&PseudoLabel> {
        let mut v: Vec<&PseudoLabel> = self.labeled.values().collect();
        v.sort_by(|a, b| a.iteration.cmp(&b.iteration).then_with(|| a.utterance_id.cmp(&b.utterance_id)));
        v
    }

    pub fn label_map(&self) -> std::collections::HashMap<&str, SentimentLabel> {
        self.labeled.iter().map(|(k, v)| (k.as_str(), v.label)).collect()
    }

    /// Conservation, disjointness and tally consistency against `corpus`.
    pub fn check_invariants(&self, corpus: &Corpus) -> Result<(), String> {
        if self.labeled.len() + self.unlabeled.len() != corpus.len() {
            return Err(format!(
                "{} labeled + {} unlabeled != {} in corpus",
                self.labeled.len(),
                self.unlabeled.len(),
                corpus.len()
            ));
        }
        for id in &self.unlabeled {
            if self.labeled.contains_key(id) {
                return Err(format!("{id:?} is both labeled and unlabeled"));
            }
            if !corpus.contains(id) {
                return Err(format!("{id:?} is not in the corpus"));
            }
        }
        if let Some(id) = self.labeled.keys().find(|id| !corpus.contains(id)) {
            return Err(format!("{id:?} is not in the corpus"));
        }
        let pos = self.labeled.values().filter(|l| l.label == SentimentLabel::Positive).count();
        let neg = self.labeled.len() - pos;
        if (pos, neg) != (self.cumulative_positive, self.cumulative_negative) {
            return Err(format!(
                "cumulative counts ({}, {}) disagree with labeled pool ({pos}, {neg})",
                self.cumulative_positive, self.cumulative_negative
            ));
        }
        Ok(())
    }

    fn pending_examples(&self, corpus: &Corpus, config: &EngineConfig) -> Vec<TrainExample> {
        let ids: Vec<&String> = if config.cumulative_retraining {
            self.sorted_labels().into_iter().map(|l| &l.utterance_id).collect()
        } else {
            self.pending.iter().collect()
        };
        ids.into_iter()
            .map(|id| {
                let u = corpus.get(id).expect("labeled ids come from the corpus");
                TrainExample::from_utterance(u, self.labeled[id.as_str()].label)
            })
            .collect()
    }

    fn apply(&mut self, mut outcome: SelectionOutcome, config: &EngineConfig, heldout: Option<HeldoutScore>) {
        if let Some(est) = &config.ratio_estimate {
            // never take a class past its estimated total
            let cap = |quota: usize, cum: usize| if quota == 0 { usize::MAX } else { quota.saturating_sub(cum) };
            outcome.truncate(
                cap(est.expected_positive, self.cumulative_positive),
                cap(est.expected_negative, self.cumulative_negative),
            );
        }
        let chosen: HashSet<&str> = outcome.selected.iter().map(|s| s.utterance_id.as_str()).collect();
        self.unlabeled.retain(|id| !chosen.contains(id.as_str()));
        self.pending.clear();
        for s in &outcome.selected {
            match s.label {
                SentimentLabel::Positive => self.cumulative_positive += 1,
                _ => self.cumulative_negative += 1,
            }
            self.pending.push(s.utterance_id.clone());
            let prev = self.labeled.insert(
                s.utterance_id.clone(),
                PseudoLabel {
                    utterance_id: s.utterance_id.clone(),
                    label: s.label,
                    confidence: s.confidence,
                    iteration: self.iteration,
                },
            );
            debug_assert!(prev.is_none(), "pseudo-labels are never revised");
        }
        let selected_positive = outcome.count(SentimentLabel::Positive);
        self.history.push(IterationRecord {
            iteration: self.iteration,
            requested_positive: outcome.requested_positive,
            requested_negative: outcome.requested_negative,
            selected_positive,
            selected_negative: outcome.selected.len() - selected_positive,
            shortfall_positive: outcome.shortfall_positive,
            shortfall_negative: outcome.shortfall_negative,
            cumulative_positive: self.cumulative_positive,
            cumulative_negative: self.cumulative_negative,
            unlabeled_remaining: self.unlabeled.len(),
            heldout,
        });
        self.stopped = should_stop(
            self.cumulative_positive,
            self.cumulative_negative,
            config.ratio_estimate.as_ref(),
            self.unlabeled.len(),
        )
        .or_else(|| outcome.is_empty().then_some(StopReason::Exhausted))
        .or_else(|| config.max_iterations.filter(|&m| self.iteration >= m).map(|_| StopReason::MaxIterations));
    }
}

/// Scores `backend` on the gold-labeled two-class part of `heldout`.
pub fn evaluate<B: ClassifierBackend + ?Sized>(
    backend: &mut B,
    heldout: &Corpus,
) -> Result<Option<ClassificationReport>, BackendError> {
    let scored: Vec<&Utterance> = heldout.iter().filter(|u| u.gold.is_some_and(SentimentLabel::is_binary)).collect();
    if scored.is_empty() {
        return Ok(None);
    }
    let preds = backend.predict_batch(&scored)?;
    let mut cm = ConfusionMatrix::default();
    for (u, p) in scored.iter().zip(&preds) {
        cm.add(u.gold.expect("filtered"), p.predicted).expect("two-class labels");
    }
    Ok(Some(metrics::report(&cm)))
}

fn heldout_score<B: ClassifierBackend + ?Sized>(
    backend: &mut B,
    heldout: Option<&Corpus>,
) -> Result<Option<HeldoutScore>, BackendError> {
    match heldout {
        Some(c) => Ok(evaluate(backend, c)?.map(HeldoutScore::from)),
        None => Ok(None),
    }
}

fn stop_for(err: &EngineError) -> Option<StopReason> {
    match err {
        EngineError::Backend(e) if e.is_numeric() => Some(StopReason::NumericAbort),
        EngineError::Backend(e) => Some(StopReason::BackendLost { message: e.to_string() }),
        _ => None,
    }
}

fn warn_epochs(config: &EngineConfig) {
    if config.epochs_per_iteration > 1 {
        log::warn!(
            "epochs_per_iteration = {}: more than one pass over each pseudo-labeled batch tends to overfit",
            config.epochs_per_iteration
        );
    }
}

/// Predicts the whole corpus with the initial model and makes the first
/// selection (iteration 0). No training happens here.
pub fn zero_shot_init<B: ClassifierBackend + ?Sized>(
    backend: &mut B,
    corpus: &Corpus,
    config: &EngineConfig,
) -> Result<RunState, EngineError> {
    let mut state = RunState::new(corpus);
    init_into(&mut state, backend, corpus, config, None)?;
    Ok(state)
}

fn init_into<B: ClassifierBackend + ?Sized>(
    state: &mut RunState,
    backend: &mut B,
    corpus: &Corpus,
    config: &EngineConfig,
    heldout: Option<&Corpus>,
) -> Result<(), EngineError> {
    if corpus.is_empty() {
        return Err(EngineError::EmptyDataset);
    }
    config.validate()?;
    warn_epochs(config);
    let all: Vec<&Utterance> = corpus.iter().collect();
    let preds = backend.predict_batch(&all)?;
    let score = heldout_score(backend, heldout)?;
    let outcome = config.strategy.select(&preds, corpus, 0)?;
    state.zero_shot = preds;
    state.apply(outcome, config, score);
    log::info!(
        "iteration 0: labeled {} (+{} / -{}), {} remaining",
        state.labeled.len(),
        state.cumulative_positive,
        state.cumulative_negative,
        state.unlabeled.len()
    );
    Ok(())
}

/// One round: fine-tune on the latest selection, predict the remaining pool,
/// select, and record. A stopped state is returned unchanged; an empty pool
/// only sets the stop flag.
pub fn iterate_once<B: ClassifierBackend + ?Sized>(
    state: &mut RunState,
    backend: &mut B,
    corpus: &Corpus,
    config: &EngineConfig,
) -> Result<(), EngineError> {
    iterate_inner(state, backend, corpus, config, None)
}

fn iterate_inner<B: ClassifierBackend + ?Sized>(
    state: &mut RunState,
    backend: &mut B,
    corpus: &Corpus,
    config: &EngineConfig,
    heldout: Option<&Corpus>,
) -> Result<(), EngineError> {
    if state.stopped.is_some() {
        return Ok(());
    }
    if state.unlabeled.is_empty() {
        state.stopped = Some(StopReason::Exhausted);
        return Ok(());
    }
    let batch = state.pending_examples(corpus, config);
    backend.train(&batch, config.epochs_per_iteration)?;
    state.pending.clear();

    let score = heldout_score(backend, heldout)?;
    let pool: Vec<&Utterance> =
        state.unlabeled.iter().map(|id| corpus.get(id).expect("unlabeled ids come from the corpus")).collect();
    let preds = backend.predict_batch(&pool)?;
    let outcome = config.strategy.select(&preds, corpus, state.iteration + 1)?;
    state.iteration += 1;
    state.apply(outcome, config, score);
    log::info!(
        "iteration {}: labeled {} (+{} / -{}), {} remaining",
        state.iteration,
        state.labeled.len(),
        state.cumulative_positive,
        state.cumulative_negative,
        state.unlabeled.len()
    );
    Ok(())
}

/// After a clean stop, trains on the last selection (if configured) and
/// records the final held-out score.
pub fn finish<B: ClassifierBackend + ?Sized>(
    state: &mut RunState,
    backend: &mut B,
    corpus: &Corpus,
    config: &EngineConfig,
    heldout: Option<&Corpus>,
) -> Result<(), EngineError> {
    if config.final_fine_tune && !state.pending.is_empty() {
        let batch = state.pending_examples(corpus, config);
        backend.train(&batch, config.epochs_per_iteration)?;
        state.pending.clear();
    }
    state.final_heldout = heldout_score(backend, heldout)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub state: RunState,
    pub stop_reason: StopReason,
    pub export_path: Option<PathBuf>,
}

impl RunResult {
    pub fn history(&self) -> &[IterationRecord] {
        &self.state.history
    }
}

/// Runs the loop to a stop. Backend failures end the run with reason
/// `numeric-abort` or `backend-lost` and keep the partial state.
pub fn run_to_completion<B: ClassifierBackend + ?Sized>(
    backend: &mut B,
    corpus: &Corpus,
    config: &EngineConfig,
) -> Result<RunResult, EngineError> {
    run_with_heldout(backend, corpus, config, None)
}

/// As [`run_to_completion`], also scoring the model on `heldout` gold labels
/// each round. Held-out labels never reach the model.
pub fn run_with_heldout<B: ClassifierBackend + ?Sized>(
    backend: &mut B,
    corpus: &Corpus,
    config: &EngineConfig,
    heldout: Option<&Corpus>,
) -> Result<RunResult, EngineError> {
    if corpus.is_empty() {
        return Err(EngineError::EmptyDataset);
    }
    config.validate()?;
    let mut state = RunState::new(corpus);
    let mut outcome = init_into(&mut state, backend, corpus, config, heldout);
    while outcome.is_ok() && state.stopped.is_none() {
        outcome = iterate_inner(&mut state, backend, corpus, config, heldout);
    }
    if outcome.is_ok() {
        outcome = finish(&mut state, backend, corpus, config, heldout);
    }
    if let Err(e) = outcome {
        let reason = stop_for(&e).ok_or(e)?;
        log::warn!("run aborted: {reason}");
        state.stopped = Some(reason);
    }
    let stop_reason = state.stopped.clone().expect("loop exits only when stopped");
    log::info!("stopped after {} rounds: {stop_reason}", state.rounds());
    Ok(RunResult { state, stop_reason, export_path: None })
}

/// Writes one JSON line per labeled utterance, sorted by (iteration, id).
/// The file is replaced atomically.
pub fn export_pseudo_labels(state: &RunState, path: &Path) -> Result<(), EngineError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| EngineError::io(path, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        for label in state.sorted_labels() {
            serde_json::to_writer(&mut w, label).map_err(|e| EngineError::io(path, e.into()))?;
            w.write_all(b"\n").map_err(|e| EngineError::io(path, e))?;
        }
        w.flush().map_err(|e| EngineError::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| EngineError::io(path, e.error))?;
    Ok(())
}

pub fn read_pseudo_labels(path: &Path) -> Result<Vec<PseudoLabel>, EngineError> {
    let f = File::open(path).map_err(|e| EngineError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| EngineError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let label: PseudoLabel = serde_json::from_str(&line).map_err(|e| EngineError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !label.label.is_binary() {
            return Err(EngineError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("label {} is not one of the two classes", label.label),
            });
        }
        out.push(label);
    }
    Ok(out)
}

/// Machine-readable summary written next to the exports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub stop_reason: StopReason,
    pub rounds: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    pub cumulative_positive: usize,
    pub cumulative_negative: usize,
    pub history: Vec<IterationRecord>,
    pub final_heldout: Option<HeldoutScore>,
    pub exports: BTreeMap<String, String>,
}

impl RunReport {
    pub fn new(result: &RunResult, exports: BTreeMap<String, String>) -> Self {
        let s = &result.state;
        RunReport {
            stop_reason: result.stop_reason.clone(),
            rounds: s.rounds(),
            labeled: s.labeled.len(),
            unlabeled: s.unlabeled.len(),
            cumulative_positive: s.cumulative_positive,
            cumulative_negative: s.cumulative_negative,
            history: s.history.clone(),
            final_heldout: s.final_heldout,
            exports,
        }
    }
}

/// Per-round history as CSV.
pub fn write_history_csv<W: Write>(history: &[IterationRecord], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "iteration",
        "selected_positive",
        "selected_negative",
        "shortfall_positive",
        "shortfall_negative",
        "cumulative_positive",
        "cumulative_negative",
        "unlabeled_remaining",
        "heldout_weighted_f1",
        "heldout_accuracy",
    ])?;
    for r in history {
        let (f1, acc) = match r.heldout {
            Some(h) => (h.weighted_f1.to_string(), h.accuracy.to_string()),
            None => (String::new(), String::new()),
        };
        out.write_record([
            r.iteration.to_string(),
            r.selected_positive.to_string(),
            r.selected_negative.to_string(),
            r.shortfall_positive.to_string(),
            r.shortfall_negative.to_string(),
            r.cumulative_positive.to_string(),
            r.cumulative_negative.to_string(),
            r.unlabeled_remaining.to_string(),
            f1,
            acc,
        ])?;
    }
    out.flush()?;
    Ok(())
}
