//! Command-line front end: run the loop, estimate a class ratio, evaluate
//! pseudo-labels, analyze code-mixing, generate synthetic corpora.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 backend failure
//! (including numeric divergence), 4 aborted by the user.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use selftrain::analysis::{self, BucketPerformance};
use selftrain::config::{ConfigError, RunConfig};
use selftrain::corpus::{
    filter_two_class, generate_synthetic, preprocess, read_corpus, write_jsonl, Corpus, CorpusFormat, SentimentLabel,
    SyntheticSpec, Utterance,
};
use selftrain::engine::{self, EngineError, RunReport};
use selftrain::metrics;
use selftrain::selection::{estimate_ratio, Annotator, GoldOracle, RatioEstimate, SelectionError};

#[derive(Debug, Parser)]
#[command(name = "selftrain", version, about = "Unsupervised self-training for code-switched sentiment")]
struct Cli {
    /// Corpus format; detected from the first character when omitted.
    #[arg(long, global = true, value_parser = parse_format)]
    format: Option<CorpusFormat>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the self-training loop on an unlabeled corpus.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Gold-labeled corpus scored after every round (never trained on).
        #[arg(long)]
        test_corpus: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_iterations: Option<usize>,
        #[arg(long)]
        selection_percent: Option<f64>,
        /// Ratio estimate JSON as written by `estimate-ratio`.
        #[arg(long)]
        ratio_estimate: Option<PathBuf>,
    },
    /// Estimate the positive-class ratio from k sampled utterances.
    EstimateRatio {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(short)]
        k: usize,
        #[arg(long, env = "SELFTRAIN_SEED")]
        seed: u64,
        /// Answer from the corpus's gold labels instead of prompting.
        #[arg(long)]
        oracle: bool,
        #[arg(long, default_value = "ratio_estimate.json")]
        out: PathBuf,
    },
    /// Score pseudo-labels against a gold corpus.
    Evaluate {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Token-ratio bucket performance and class/bucket histograms.
    Analyze {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate train/test/source corpora from a spec file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_format(s: &str) -> Result<CorpusFormat, String> {
    CorpusFormat::parse(s).ok_or_else(|| format!("unknown format {s:?} (expected jsonl or tagged)"))
}

#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn input(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: 2, error: error.into() }
    }

    fn backend(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: 3, error: error.into() }
    }

    fn abort(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: 4, error: error.into() }
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let format = cli.format;
    let result = match cli.command {
        Command::Run { config, corpus, out, test_corpus, seed, max_iterations, selection_percent, ratio_estimate } => {
            let flags = RunFlags { seed, max_iterations, selection_percent, ratio_estimate };
            cmd_run(&config, &corpus, &out, test_corpus.as_deref(), flags, format)
        }
        Command::EstimateRatio { corpus, k, seed, oracle, out } => cmd_estimate_ratio(&corpus, k, seed, oracle, &out, format),
        Command::Evaluate { labels, corpus, curve } => cmd_evaluate(&labels, &corpus, curve.as_deref(), format),
        Command::Analyze { corpus, labels, out } => cmd_analyze(&corpus, labels.as_deref(), &out, format),
        Command::Synth { spec, out } => cmd_synth(&spec, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load_corpus(path: &Path, format: Option<CorpusFormat>) -> Result<Corpus, Failure> {
    read_corpus(path, format).with_context(|| format!("reading corpus {}", path.display())).map_err(Failure::input)
}

/// Lowercase, NFC, URL removal, then drop neutral-gold utterances.
fn prepare(raw: &Corpus) -> Corpus {
    let (clean, pre) = preprocess(raw);
    if pre.urls_removed > 0 {
        log::info!("{}: removed {} URL tokens", raw.name(), pre.urls_removed);
    }
    let (two_class, filt) = filter_two_class(&clean);
    if filt.removed_neutral > 0 {
        log::info!("{}: dropped {} neutral utterances", raw.name(), filt.removed_neutral);
    }
    two_class
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(Failure::input)
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> anyhow::Result<()>) -> CliResult {
    let file = File::create(path).with_context(|| format!("creating {}", path.display())).map_err(Failure::input)?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|()| w.flush().map_err(Into::into))
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::input)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

struct RunFlags {
    seed: Option<u64>,
    max_iterations: Option<usize>,
    selection_percent: Option<f64>,
    ratio_estimate: Option<PathBuf>,
}

fn cmd_run(
    config_path: &Path,
    corpus_path: &Path,
    out: &Path,
    test_path: Option<&Path>,
    flags: RunFlags,
    format: Option<CorpusFormat>,
) -> CliResult {
    let mut config = RunConfig::load(config_path).map_err(Failure::input)?;
    config.apply_env().map_err(Failure::input)?;
    if let Some(seed) = flags.seed {
        config.seed = seed;
    }
    if flags.max_iterations.is_some() {
        config.max_iterations = flags.max_iterations;
    }
    if let Some(p) = flags.selection_percent {
        config.selection_percent = p;
    }
    if let Some(path) = &flags.ratio_estimate {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(Failure::input)?;
        let est: RatioEstimate =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())).map_err(Failure::input)?;
        config.ratio_estimate = Some(est);
    }

    let corpus = prepare(&load_corpus(corpus_path, format)?);
    let test = match test_path {
        Some(p) => Some(prepare(&load_corpus(p, format)?)),
        None => None,
    };
    if corpus.is_empty() {
        return Err(Failure::input(anyhow!("corpus {} has no usable utterances", corpus_path.display())));
    }
    let engine_config = config.engine_config(corpus.len()).map_err(Failure::input)?;
    create_dir(out)?;

    let mut backend = config.build_backend().map_err(|e| match e {
        ConfigError::Backend(b) => Failure::backend(b),
        other => Failure::input(other),
    })?;
    log::info!("{} utterances, strategy {:?}", corpus.len(), engine_config.strategy);
    let mut result = engine::run_with_heldout(&mut backend, &corpus, &engine_config, test.as_ref()).map_err(|e| match e {
        EngineError::Backend(b) => Failure::backend(b),
        other => Failure::input(other),
    })?;
    drop(backend);

    let labels_path = out.join("pseudo_labels.jsonl");
    engine::export_pseudo_labels(&result.state, &labels_path).map_err(Failure::input)?;
    result.export_path = Some(labels_path);

    let mut exports = BTreeMap::new();
    exports.insert("pseudo_labels".to_string(), "pseudo_labels.jsonl".to_string());
    exports.insert("metrics".to_string(), "metrics.csv".to_string());
    write_file(&out.join("metrics.csv"), |w| Ok(engine::write_history_csv(result.history(), w)?))?;

    let gold = corpus.gold_map();
    let labels: Vec<engine::PseudoLabel> = result.state.sorted_labels().into_iter().cloned().collect();
    if !labels.is_empty() && labels.iter().all(|l| gold.contains_key(l.utterance_id.as_str())) {
        let curve = metrics::algorithmic_curve(&labels, &gold).map_err(Failure::input)?;
        write_file(&out.join("curve.csv"), |w| Ok(metrics::write_curve_csv(&curve, w)?))?;
        exports.insert("curve".to_string(), "curve.csv".to_string());
    }
    exports.insert("report".to_string(), "run_report.json".to_string());
    write_json(&out.join("run_report.json"), &RunReport::new(&result, exports))?;

    let reason = &result.stop_reason;
    eprintln!(
        "stopped: {reason} after {} rounds; {} labeled, {} unlabeled",
        result.state.rounds(),
        result.state.labeled.len(),
        result.state.unlabeled.len()
    );
    if reason.is_clean() {
        Ok(())
    } else {
        Err(Failure::backend(anyhow!("run aborted: {reason}")))
    }
}

/// Prompts on stderr and reads answers from stdin.
struct Prompt<R> {
    input: R,
}

impl<R: BufRead> Annotator for Prompt<R> {
    fn annotate(&mut self, position: usize, k: usize, u: &Utterance) -> Result<SentimentLabel, String> {
        loop {
            eprint!("[{position}/{k}] {}\n(p/n/q) > ", u.text);
            let _ = io::stderr().flush();
            let mut line = String::new();
            match self.input.read_line(&mut line) {
                Ok(0) => return Err("end of input".into()),
                Ok(_) => {}
                Err(e) => return Err(e.to_string()),
            }
            match line.trim() {
                "p" => return Ok(SentimentLabel::Positive),
                "n" => return Ok(SentimentLabel::Negative),
                "q" => return Err("quit by user".into()),
                other => eprintln!("unrecognized answer {other:?}; type p, n or q"),
            }
        }
    }
}

fn cmd_estimate_ratio(corpus_path: &Path, k: usize, seed: u64, oracle: bool, out: &Path, format: Option<CorpusFormat>) -> CliResult {
    let corpus = prepare(&load_corpus(corpus_path, format)?);
    if k == 0 || k > corpus.len() {
        return Err(Failure::input(anyhow!("k = {k} must be between 1 and the corpus size {}", corpus.len())));
    }
    let estimate = if oracle {
        estimate_ratio(&corpus, k, seed, &mut GoldOracle).map_err(Failure::input)?
    } else {
        let mut prompt = Prompt { input: io::stdin().lock() };
        estimate_ratio(&corpus, k, seed, &mut prompt).map_err(|e| match e {
            SelectionError::EstimationAborted(_) => Failure::abort(e),
            other => Failure::input(other),
        })?
    };
    write_json(out, &estimate)?;
    println!("{}", serde_json::to_string(&estimate).expect("serializable"));
    Ok(())
}

fn print_report(r: &metrics::ClassificationReport) {
    println!("weighted_f1 {:.4}", r.weighted_f1);
    println!("accuracy {:.4}", r.accuracy);
    for label in SentimentLabel::BINARY {
        let c = r.class(label);
        println!(
            "{label} precision {:.4} recall {:.4} f1 {:.4} support {}",
            c.precision, c.recall, c.f1, c.support
        );
    }
}

fn cmd_evaluate(labels_path: &Path, corpus_path: &Path, curve: Option<&Path>, format: Option<CorpusFormat>) -> CliResult {
    let labels = engine::read_pseudo_labels(labels_path).map_err(Failure::input)?;
    if labels.is_empty() {
        return Err(Failure::input(anyhow!("{} contains no labels", labels_path.display())));
    }
    let corpus = load_corpus(corpus_path, format)?;
    let unknown: Vec<&str> = labels.iter().map(|l| l.utterance_id.as_str()).filter(|id| !corpus.contains(id)).collect();
    if !unknown.is_empty() {
        let shown: Vec<&str> = unknown.iter().take(10).copied().collect();
        return Err(Failure::input(anyhow!(
            "{} label ids do not resolve in the corpus: {}",
            unknown.len(),
            shown.join(", ")
        )));
    }
    let gold_map = corpus.gold_map();
    let (mut gold, mut pred) = (Vec::new(), Vec::new());
    let mut missing = Vec::new();
    for l in &labels {
        match gold_map.get(l.utterance_id.as_str()) {
            Some(&g) => {
                gold.push(g);
                pred.push(l.label);
            }
            None => missing.push(l.utterance_id.as_str()),
        }
    }
    if !missing.is_empty() {
        let shown: Vec<&str> = missing.iter().take(10).copied().collect();
        return Err(Failure::input(anyhow!("{} labeled ids have no gold label: {}", missing.len(), shown.join(", "))));
    }
    let report = metrics::score(&gold, &pred).map_err(Failure::input)?;
    print_report(&report);
    if let Some(path) = curve {
        let points = metrics::algorithmic_curve(&labels, &gold_map).map_err(Failure::input)?;
        write_file(path, |w| Ok(metrics::write_curve_csv(&points, w)?))?;
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct UndefinedSidecar {
    total: usize,
    undefined: usize,
    undefined_fraction: f64,
}

#[derive(serde::Serialize)]
struct DistributionReport {
    labeled: usize,
    tv_distance: f64,
    mean_bucket_gold: BTreeMap<String, Option<f64>>,
    mean_bucket_labels: BTreeMap<String, Option<f64>>,
}

fn mean_buckets(s: &analysis::DistributionSummary) -> BTreeMap<String, Option<f64>> {
    SentimentLabel::BINARY.iter().map(|&l| (l.to_string(), s.mean_bucket(l))).collect()
}

fn cmd_analyze(corpus_path: &Path, labels_path: Option<&Path>, out: &Path, format: Option<CorpusFormat>) -> CliResult {
    let corpus = prepare(&load_corpus(corpus_path, format)?);
    create_dir(out)?;
    let total = corpus.len();
    let undefined = corpus.iter().filter(|u| analysis::token_ratio(u).is_none()).count();
    write_json(
        &out.join("undefined.json"),
        &UndefinedSidecar {
            total,
            undefined,
            undefined_fraction: if total == 0 { 0.0 } else { undefined as f64 / total as f64 },
        },
    )?;
    let gold = analysis::gold_distribution(&corpus);
    write_file(&out.join("gold_histogram.csv"), |w| Ok(analysis::write_histogram_csv(&gold, w)?))?;

    let labels = match labels_path {
        Some(p) => engine::read_pseudo_labels(p).map_err(Failure::input)?,
        None => Vec::new(),
    };
    let label_map: HashMap<&str, SentimentLabel> = labels.iter().map(|l| (l.utterance_id.as_str(), l.label)).collect();
    let perf: BucketPerformance = analysis::bucket_performance(&corpus, &label_map);
    write_file(&out.join("buckets.csv"), |w| Ok(analysis::write_bucket_csv(&perf, w)?))?;

    if labels_path.is_some() {
        let predicted = analysis::prediction_distribution(&corpus, &label_map).map_err(Failure::input)?;
        write_file(&out.join("label_histogram.csv"), |w| Ok(analysis::write_histogram_csv(&predicted, w)?))?;
        // compare against gold over the same utterances
        let gold_sub: HashMap<&str, SentimentLabel> = label_map
            .keys()
            .filter_map(|id| corpus.get(id).and_then(|u| u.gold).map(|g| (*id, g)))
            .collect();
        if gold_sub.len() == label_map.len() {
            let gold_same = analysis::prediction_distribution(&corpus, &gold_sub).map_err(Failure::input)?;
            let tv = analysis::tv_distance(&gold_same, &predicted).map_err(Failure::input)?;
            write_json(
                &out.join("distribution.json"),
                &DistributionReport {
                    labeled: label_map.len(),
                    tv_distance: tv,
                    mean_bucket_gold: mean_buckets(&gold_same),
                    mean_bucket_labels: mean_buckets(&predicted),
                },
            )?;
        } else {
            log::warn!("some labeled utterances lack gold; skipping distribution comparison");
        }
    }
    Ok(())
}

fn cmd_synth(spec_path: &Path, out: &Path) -> CliResult {
    let text = fs::read_to_string(spec_path).with_context(|| format!("reading {}", spec_path.display())).map_err(Failure::input)?;
    let spec: SyntheticSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", spec_path.display())).map_err(Failure::input)?;
    let corpora = generate_synthetic(&spec).map_err(Failure::input)?;
    create_dir(out)?;
    for (name, corpus) in [("train", &corpora.train), ("test", &corpora.test), ("source", &corpora.source)] {
        write_file(&out.join(format!("{name}.jsonl")), |w| Ok(write_jsonl(corpus, w)?))?;
    }
    eprintln!(
        "wrote {} train, {} test, {} source utterances to {}",
        corpora.train.len(),
        corpora.test.len(),
        corpora.source.len(),
        out.display()
    );
    Ok(())
}
