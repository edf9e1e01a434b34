//! Reference peer for the external backend protocol.
//!
//! `builtin` serves the built-in model over the wire (pre-trained on
//! `--source` when given), so a run through the protocol can be compared with
//! an in-process run. The other modes misbehave on purpose and exist for
//! testing transport failure handling.

use std::io::{self, BufRead, Write};
use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use selftrain::backend::protocol::{expected_classes, Ack, HelloResponse, PredictResponse, Request, PROTOCOL_VERSION};
use selftrain::backend::{featurize_surfaces, BackendConfig, BuiltinModel, TrainExample};
use selftrain::corpus::{filter_two_class, preprocess, read_corpus};

#[derive(Debug, Parser)]
#[command(name = "selftrain-peer", about = "Line-protocol classifier peer")]
struct Cli {
    #[command(subcommand)]
    mode: Mode,
}

#[derive(Debug, Subcommand)]
enum Mode {
    /// Serve the built-in hashed n-gram model.
    Builtin {
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        pretrain_epochs: usize,
        #[arg(long, default_value_t = BackendConfig::default().learning_rate)]
        learning_rate: f64,
        #[arg(long, default_value_t = BackendConfig::default().hash_dim)]
        hash_dim: usize,
        #[arg(long, default_value_t = BackendConfig::default().ngram_max)]
        ngram_max: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Answer every text with the same probabilities.
    Fixed {
        #[arg(long, default_value_t = 0.5)]
        p_positive: f64,
    },
    /// Return one probability pair fewer than requested.
    Short,
    /// Exit without a reply after answering `n` requests past the handshake.
    DieAfter { n: usize },
    /// Exit before the handshake.
    Exit,
    /// Reply to predict requests with a line that is not JSON.
    Garbage,
}

trait Responder {
    fn predict(&mut self, texts: &[String]) -> anyhow::Result<Vec<[f64; 2]>>;
    fn train(&mut self, _examples: Vec<TrainExample>, _epochs: usize) -> anyhow::Result<()> {
        Ok(())
    }
}

struct Builtin(BuiltinModel);

impl Responder for Builtin {
    fn predict(&mut self, texts: &[String]) -> anyhow::Result<Vec<[f64; 2]>> {
        Ok(texts
            .iter()
            .map(|t| {
                let fs = featurize_surfaces(t.split_whitespace(), self.0.config());
                let p = self.0.probs(&fs);
                [p.p_positive, p.p_negative]
            })
            .collect())
    }

    fn train(&mut self, examples: Vec<TrainExample>, epochs: usize) -> anyhow::Result<()> {
        Ok(self.0.fit(&examples, epochs)?)
    }
}

struct Fixed(f64);

impl Responder for Fixed {
    fn predict(&mut self, texts: &[String]) -> anyhow::Result<Vec<[f64; 2]>> {
        Ok(vec![[self.0, 1.0 - self.0]; texts.len()])
    }
}

fn send<W: Write, T: serde::Serialize>(out: &mut W, value: &T) -> io::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")?;
    out.flush()
}

#[derive(Clone, Copy)]
enum Fault {
    None,
    Short,
    DieAfter(usize),
    Garbage,
}

fn serve(mut model: Box<dyn Responder>, fault: Fault) -> anyhow::Result<()> {
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let mut handled = 0usize;
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let request: Request = serde_json::from_str(&line).with_context(|| format!("bad request {line:?}"))?;
        if let Request::Hello { version } = request {
            let ok = version == PROTOCOL_VERSION;
            send(&mut out, &HelloResponse { ok, classes: expected_classes() })?;
            continue;
        }
        if let Fault::DieAfter(n) = fault {
            if handled >= n {
                std::process::exit(1);
            }
        }
        handled += 1;
        match request {
            Request::Hello { .. } => unreachable!("handled above"),
            Request::Predict { texts } => match fault {
                Fault::Garbage => {
                    out.write_all(b"this is not json\n")?;
                    out.flush()?;
                }
                _ => {
                    let mut probs = model.predict(&texts)?;
                    if let Fault::Short = fault {
                        probs.pop();
                    }
                    send(&mut out, &PredictResponse { probs })?;
                }
            },
            Request::Train { examples, epochs } => {
                let examples = examples
                    .iter()
                    .enumerate()
                    .map(|(i, e)| TrainExample::from_text(i.to_string(), &e.text, e.label))
                    .collect();
                let ack = match model.train(examples, epochs) {
                    Ok(()) => Ack::ok(),
                    Err(e) => Ack { ok: false, error: Some(e.to_string()) },
                };
                send(&mut out, &ack)?;
            }
            Request::Bye => break,
        }
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.mode {
        Mode::Builtin { source, pretrain_epochs, learning_rate, hash_dim, ngram_max, seed } => {
            let config = BackendConfig { learning_rate, hash_dim, ngram_max, seed, ..BackendConfig::default() };
            let mut model = BuiltinModel::new(config)?;
            if let Some(path) = source {
                let raw = read_corpus(&path, None).with_context(|| format!("reading {}", path.display()))?;
                let (clean, _) = preprocess(&raw);
                model.pretrain(&filter_two_class(&clean).0, pretrain_epochs)?;
            }
            serve(Box::new(Builtin(model)), Fault::None)
        }
        Mode::Fixed { p_positive } => serve(Box::new(Fixed(p_positive)), Fault::None),
        Mode::Short => serve(Box::new(Fixed(0.5)), Fault::Short),
        Mode::DieAfter { n } => serve(Box::new(Fixed(0.5)), Fault::DieAfter(n)),
        Mode::Exit => std::process::exit(1),
        Mode::Garbage => serve(Box::new(Fixed(0.5)), Fault::Garbage),
    }
}
