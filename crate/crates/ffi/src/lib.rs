//! C ABI for the selftrain engine.
//!
//! Every object crosses the boundary as an opaque handle created by a
//! `st_*_new`/`st_*_load` function and released by the matching `st_*_free`.
//! Fallible functions return an [`StStatus`]; on failure the message is
//! available from [`st_last_error`] on the same thread until the next call.
//! Strings returned by the library are owned by the caller and must be freed
//! with [`st_string_free`].
//!
//! Handles are not thread-safe: a handle must not be used from two threads at
//! once.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use selftrain::backend::{BackendConfig, BuiltinModel};
use selftrain::corpus::{filter_two_class, generate_synthetic, preprocess, read_corpus, CorpusFormat, SyntheticSpec};
use selftrain::engine::{export_pseudo_labels, run_with_heldout, RunReport};
use selftrain::{metrics, Corpus, RunConfig, RunResult, SentimentLabel};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Backend = 5,
    Panic = 6,
}

/// Input file format for [`st_corpus_load`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StFormat {
    Auto = 0,
    Jsonl = 1,
    TokenTagged = 2,
}

/// Class codes used by [`st_weighted_f1`].
pub const ST_LABEL_POSITIVE: i32 = 0;
pub const ST_LABEL_NEGATIVE: i32 = 1;

/// A parsed corpus.
pub struct StCorpus(Corpus);

/// The built-in hashed n-gram classifier.
pub struct StModel(BuiltinModel);

/// Outcome of [`st_run`].
pub struct StRunResult(RunResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(StStatus, String);

impl Failure {
    fn new(status: StStatus, message: impl ToString) -> Self {
        Failure(status, message.to_string())
    }
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> StStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("panic inside selftrain".into());
            StStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::new(StStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::new(StStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(StStatus::NullPointer, format!("{what} is NULL")));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Failure::new(StStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn optional_json<T: serde::de::DeserializeOwned + Default>(p: *const c_char, what: &str) -> Result<T, Failure> {
    if p.is_null() {
        return Ok(T::default());
    }
    let text = string(p, what)?;
    serde_json::from_str(text).map_err(|e| Failure::new(StStatus::InvalidArgument, format!("{what}: {e}")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(StStatus::NullPointer, "output pointer is NULL"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn st_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn st_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Reads a corpus file, lowercases and NFC-normalizes it, drops URL tokens
/// and, when `two_class` is true, neutral-gold utterances.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn st_corpus_load(path: *const c_char, format: StFormat, two_class: bool, out: *mut *mut StCorpus) -> StStatus {
    guard(|| {
        let path = string(path, "path")?;
        let format = match format {
            StFormat::Auto => None,
            StFormat::Jsonl => Some(CorpusFormat::Jsonl),
            StFormat::TokenTagged => Some(CorpusFormat::TokenTagged),
        };
        let raw = read_corpus(Path::new(path), format).map_err(|e| {
            let status = if matches!(e, selftrain::CorpusError::Io(_)) { StStatus::Io } else { StStatus::InvalidArgument };
            Failure::new(status, format!("{path}: {e}"))
        })?;
        let (mut corpus, _) = preprocess(&raw);
        if two_class {
            corpus = filter_two_class(&corpus).0;
        }
        put(out, StCorpus(corpus))
    })
}

/// Number of utterances, or 0 for NULL.
///
/// # Safety
/// `corpus` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn st_corpus_len(corpus: *const StCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.len())
}

/// # Safety
/// `corpus` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn st_corpus_free(corpus: *mut StCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Generates the synthetic train/test/source corpora described by
/// `spec_json` (NULL for defaults).
///
/// # Safety
/// `spec_json` must be NULL or NUL-terminated; the three outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn st_synth_generate(
    spec_json: *const c_char,
    train: *mut *mut StCorpus,
    test: *mut *mut StCorpus,
    source: *mut *mut StCorpus,
) -> StStatus {
    guard(|| {
        if train.is_null() || test.is_null() || source.is_null() {
            return Err(Failure::new(StStatus::NullPointer, "output pointer is NULL"));
        }
        let spec: SyntheticSpec = optional_json(spec_json, "spec")?;
        let c = generate_synthetic(&spec).map_err(|e| Failure::new(StStatus::InvalidArgument, e))?;
        put(train, StCorpus(c.train))?;
        put(test, StCorpus(c.test))?;
        put(source, StCorpus(c.source))
    })
}

/// Creates an untrained built-in model from a JSON backend configuration
/// (`learning_rate`, `hash_dim`, `ngram_max`, `seed`; NULL for defaults).
///
/// # Safety
/// `config_json` must be NULL or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn st_model_new_builtin(config_json: *const c_char, out: *mut *mut StModel) -> StStatus {
    guard(|| {
        let config: BackendConfig = optional_json(config_json, "config")?;
        let model = BuiltinModel::new(config).map_err(|e| Failure::new(StStatus::InvalidArgument, e))?;
        put(out, StModel(model))
    })
}

/// Supervised pre-training on the gold labels of `source`.
///
/// # Safety
/// Both handles must be live.
#[no_mangle]
pub unsafe extern "C" fn st_model_pretrain(model: *mut StModel, source: *const StCorpus, epochs: usize) -> StStatus {
    guard(|| {
        let model = borrow_mut(model, "model")?;
        let source = borrow(source, "source")?;
        model.0.pretrain(&source.0, epochs).map_err(|e| Failure::new(StStatus::Backend, e))
    })
}

/// Writes P(positive) of every utterance, in corpus order, to `p_positive`,
/// which must hold `len` values; `len` must equal the corpus length.
///
/// # Safety
/// Handles must be live and `p_positive` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn st_model_predict(
    model: *const StModel,
    corpus: *const StCorpus,
    p_positive: *mut f64,
    len: usize,
) -> StStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let corpus = borrow(corpus, "corpus")?;
        if p_positive.is_null() {
            return Err(Failure::new(StStatus::NullPointer, "p_positive is NULL"));
        }
        if len != corpus.0.len() {
            return Err(Failure::new(StStatus::InvalidArgument, format!("buffer holds {len}, corpus has {}", corpus.0.len())));
        }
        let utts: Vec<_> = corpus.0.iter().collect();
        let out = std::slice::from_raw_parts_mut(p_positive, len);
        for (slot, p) in out.iter_mut().zip(model.0.predict(&utts)) {
            *slot = p.probs.p_positive;
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn st_model_free(model: *mut StModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs self-training of `model` on `corpus`. `config_json` is a run
/// configuration (the `backend` section is ignored; NULL for defaults).
/// `heldout` may be NULL. The model keeps its fine-tuned weights.
///
/// A run that ends because the model diverged still succeeds; inspect
/// [`st_run_result_stop_reason`].
///
/// # Safety
/// Handles must be live or NULL where allowed; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn st_run(
    model: *mut StModel,
    corpus: *const StCorpus,
    config_json: *const c_char,
    heldout: *const StCorpus,
    out: *mut *mut StRunResult,
) -> StStatus {
    guard(|| {
        let model = borrow_mut(model, "model")?;
        let corpus = borrow(corpus, "corpus")?;
        let config: RunConfig = optional_json(config_json, "config")?;
        let engine = config.engine_config(corpus.0.len()).map_err(|e| Failure::new(StStatus::InvalidArgument, e))?;
        let heldout = heldout.as_ref().map(|h| &h.0);
        let result = run_with_heldout(&mut model.0, &corpus.0, &engine, heldout).map_err(|e| match e {
            selftrain::EngineError::Backend(b) => Failure::new(StStatus::Backend, b),
            other => Failure::new(StStatus::InvalidArgument, other),
        })?;
        put(out, StRunResult(result))
    })
}

/// Number of selection rounds, or 0 for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn st_run_result_rounds(result: *const StRunResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.state.rounds())
}

/// Number of pseudo-labeled utterances, or 0 for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn st_run_result_labeled(result: *const StRunResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.state.labeled.len())
}

/// Stop reason as text, e.g. `exhausted` or `ratio-stop(positive)`. Free with
/// [`st_string_free`]. NULL for a NULL handle.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn st_run_result_stop_reason(result: *const StRunResult) -> *mut c_char {
    result.as_ref().map_or(ptr::null_mut(), |r| to_c_string(r.0.stop_reason.to_string()))
}

/// The run report (stop reason, counts, per-round history) as JSON. Free with
/// [`st_string_free`]. NULL for a NULL handle.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn st_run_result_report_json(result: *const StRunResult) -> *mut c_char {
    result.as_ref().map_or(ptr::null_mut(), |r| {
        let report = RunReport::new(&r.0, BTreeMap::new());
        to_c_string(serde_json::to_string(&report).expect("reports serialize"))
    })
}

/// Writes the pseudo-labels as JSON lines to `path`.
///
/// # Safety
/// `result` must be a live handle; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn st_run_result_export(result: *const StRunResult, path: *const c_char) -> StStatus {
    guard(|| {
        let result = borrow(result, "result")?;
        let path = string(path, "path")?;
        export_pseudo_labels(&result.0.state, Path::new(path)).map_err(|e| Failure::new(StStatus::Io, e))
    })
}

/// # Safety
/// `result` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn st_run_result_free(result: *mut StRunResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

fn label(code: i32) -> Result<SentimentLabel, Failure> {
    match code {
        ST_LABEL_POSITIVE => Ok(SentimentLabel::Positive),
        ST_LABEL_NEGATIVE => Ok(SentimentLabel::Negative),
        other => Err(Failure::new(StStatus::InvalidArgument, format!("unknown label code {other}"))),
    }
}

/// Support-weighted F1 of `pred` against `gold` (class codes
/// `ST_LABEL_POSITIVE` / `ST_LABEL_NEGATIVE`).
///
/// # Safety
/// `gold` and `pred` must point to `len` readable values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn st_weighted_f1(gold: *const i32, pred: *const i32, len: usize, out: *mut f64) -> StStatus {
    guard(|| {
        if gold.is_null() || pred.is_null() || out.is_null() {
            return Err(Failure::new(StStatus::NullPointer, "NULL argument"));
        }
        if len == 0 {
            return Err(Failure::new(StStatus::InvalidArgument, "no labels"));
        }
        let g = std::slice::from_raw_parts(gold, len).iter().map(|&c| label(c)).collect::<Result<Vec<_>, _>>()?;
        let p = std::slice::from_raw_parts(pred, len).iter().map(|&c| label(c)).collect::<Result<Vec<_>, _>>()?;
        let report = metrics::score(&g, &p).map_err(|e| Failure::new(StStatus::InvalidArgument, e))?;
        *out = report.weighted_f1;
        Ok(())
    })
}
