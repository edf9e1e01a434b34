//! Acceptance suite: one line per criterion, non-zero exit if any fails.

mod common;

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use selftrain::analysis::{bucket_performance, gold_distribution, prediction_distribution, tv_distance};
use selftrain::backend::{BackendConfig, BackendError, BuiltinModel, ClassifierBackend, ExternalBackend, ProbVector, TrainExample};
use selftrain::corpus::{write_jsonl, Corpus, LangTag, SentimentLabel, Utterance};
use selftrain::engine::{
    evaluate, finish, iterate_once, run_to_completion, zero_shot_init, EngineConfig, PseudoLabel, RunResult, StopReason,
};
use selftrain::metrics::{self, algorithmic_curve};
use selftrain::selection::{estimate_ratio, GoldOracle, RatioEstimate, ScheduleShape, SelectionStrategy};

use common::*;

type Outcome = Result<String, String>;

const SEEDS: std::ops::Range<u64> = 0..10;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn vanilla_config(train_len: usize) -> EngineConfig {
    let n = (0.05 * train_len as f64).round() as usize;
    EngineConfig::new(SelectionStrategy::Vanilla { n_total: n })
}

fn final_algorithmic_f1(r: &RunResult, corpus: &Corpus) -> f64 {
    let labels: Vec<PseudoLabel> = r.state.sorted_labels().into_iter().cloned().collect();
    algorithmic_curve(&labels, &corpus.gold_map()).unwrap().last().unwrap().weighted_f1
}

fn self_training_gain() -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let mut gains = Vec::new();
    for seed in SEEDS {
        let data = synthetic(seed, 0.5);
        let mut model = pretrained(seed, &data.source);
        let zero_shot = evaluate(&mut model, &data.test).unwrap().unwrap().weighted_f1;
        run_to_completion(&mut model, &data.train, &vanilla_config(data.train.len())).unwrap();
        let fin = evaluate(&mut model, &data.test).unwrap().unwrap().weighted_f1;
        wins += usize::from(fin > zero_shot);
        gains.push(fin - zero_shot);
    }
    let med = median(&mut gains);
    let secs = start.elapsed().as_secs_f64();
    check(
        wins >= 8 && med >= 0.05 && secs < 60.0,
        format!("held-out F1 above zero-shot in {wins}/10 seeds, median gain {med:.3}, {secs:.1}s"),
    )
}

fn ratio_beats_vanilla() -> Outcome {
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in SEEDS {
        let data = synthetic(seed, 0.8);
        let model = pretrained(seed, &data.source);
        let n = (0.05 * data.train.len() as f64).round() as usize;
        let v = run_to_completion(&mut model.clone(), &data.train, &EngineConfig::new(SelectionStrategy::Vanilla { n_total: n })).unwrap();
        let cfg = EngineConfig::new(SelectionStrategy::Ratio { positive_fraction: 0.8, n_total: n });
        let r = run_to_completion(&mut model.clone(), &data.train, &cfg).unwrap();
        let (fv, fr) = (final_algorithmic_f1(&v, &data.train), final_algorithmic_f1(&r, &data.train));
        wins += usize::from(fr >= fv);
        pairs.push(format!("{fv:.2}/{fr:.2}"));
    }
    check(wins >= 7, format!("ratio >= vanilla in {wins}/10 seeds (vanilla/ratio: {})", pairs.join(" ")))
}

fn estimator_dispersion() -> Outcome {
    let n = 1000;
    let corpus = Corpus::new(
        "p80",
        (0..n).map(|i| utterance(&format!("u{i:04}"), &[LangTag::L1], Some(if i < 800 { P } else { N }))).collect(),
    )
    .unwrap();
    let estimates: Vec<f64> =
        (0..1000u64).map(|seed| estimate_ratio(&corpus, 50, seed, &mut GoldOracle).unwrap().p_positive_hat).collect();
    let (mean, std) = mean_std(&estimates);
    // hypergeometric: sqrt(p(1-p)/k * (N-k)/(N-1))
    let analytic = (0.8f64 * 0.2 / 50.0 * (950.0 / 999.0)).sqrt();
    check(
        (0.04..=0.07).contains(&std) && (mean - 0.8).abs() <= 0.01,
        format!("mean {mean:.4}, std {std:.4} (analytic {analytic:.4}) over 1000 trials"),
    )
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let len = rng.random_range(1..60);
        let p_pos = rng.random_range(0.0..1.0);
        let gold: Vec<SentimentLabel> = (0..len).map(|_| if rng.random_bool(p_pos) { P } else { N }).collect();
        let pred: Vec<SentimentLabel> = (0..len).map(|_| if rng.random_bool(0.5) { P } else { N }).collect();
        let r = metrics::score(&gold, &pred).unwrap();
        let b = brute_force_score(&gold, &pred);
        worst = worst.max((r.weighted_f1 - b.weighted_f1).abs()).max((r.accuracy - b.accuracy).abs());
    }
    let fixture = metrics::score(&[P, P, N], &[P, N, N]).unwrap().weighted_f1;
    check(
        worst <= 1e-9 && (fixture - 0.666667).abs() <= 1e-6,
        format!("max deviation {worst:.1e} over 100 sequences; fixture weighted F1 {fixture:.6}"),
    )
}

fn random_pool(rng: &mut ChaCha8Rng) -> (Corpus, Vec<selftrain::backend::Prediction>) {
    let n = rng.random_range(0..40);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    let mut utts = Vec::new();
    let mut preds = Vec::new();
    for i in ids {
        let id = format!("x{i:03}");
        let len = rng.random_range(0..6);
        let tags: Vec<LangTag> = (0..len).map(|_| [LangTag::L1, LangTag::L2, LangTag::Other][rng.random_range(0..3)]).collect();
        utts.push(utterance(&id, &tags, None));
        // coarse confidences so ties are common
        let conf = 0.5 + rng.random_range(0..6) as f64 * 0.1;
        preds.push(prediction(&id, if rng.random_bool(0.5) { P } else { N }, conf));
    }
    (Corpus::new("pool", utts).unwrap(), preds)
}

fn selection_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    for case in 0..200 {
        let (corpus, preds) = random_pool(&mut rng);
        let n_total = rng.random_range(2..30);
        let frac = rng.random_range(1..20) as f64 / 20.0;
        let schedule: Vec<usize> = (0..rng.random_range(1..4)).map(|_| rng.random_range(0..20)).collect();
        let iteration = rng.random_range(0..5);
        let min_ratio = rng.random_range(0..=10) as f64 / 10.0;
        let strategies = [
            (SelectionStrategy::Vanilla { n_total }, (n_total / 2, n_total / 2), false),
            (
                SelectionStrategy::Ratio { positive_fraction: frac, n_total },
                (round_half_up(n_total as f64 * frac), n_total - round_half_up(n_total as f64 * frac)),
                false,
            ),
            (
                SelectionStrategy::Scheduled { per_iteration: schedule.clone(), inner: ScheduleShape::Vanilla },
                {
                    let t = schedule[iteration.min(schedule.len() - 1)];
                    (t / 2, t / 2)
                },
                false,
            ),
            (
                SelectionStrategy::TokenRatioFiltered {
                    min_l2_ratio: min_ratio,
                    inner: Box::new(SelectionStrategy::Vanilla { n_total }),
                },
                (n_total / 2, n_total / 2),
                true,
            ),
        ];
        for (strategy, (want_p, want_n), filtered) in strategies {
            let pool: Vec<_> = if filtered {
                preds
                    .iter()
                    .filter(|p| oracle_ratio(corpus.get(&p.utterance_id).unwrap()).is_some_and(|r| r >= min_ratio))
                    .cloned()
                    .collect()
            } else {
                preds.clone()
            };
            let (ids, sp, sn) = oracle_select(&pool, want_p, want_n);
            let got = strategy.select(&preds, &corpus, iteration).unwrap();
            let got_ids: Vec<String> = got.selected.iter().map(|s| s.utterance_id.clone()).collect();
            if got_ids != ids || got.shortfall_positive != sp || got.shortfall_negative != sn {
                return Err(format!("case {case}: {strategy:?} selected {got_ids:?}, oracle {ids:?}"));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} strategy outputs equal the sort-and-prefix oracle over 200 pools"))
}

fn random_engine_config(rng: &mut ChaCha8Rng, corpus_len: usize) -> EngineConfig {
    let n_total = rng.random_range(2..=(corpus_len / 2).max(2));
    let strategy = match rng.random_range(0..4) {
        0 => SelectionStrategy::Vanilla { n_total },
        1 => SelectionStrategy::Ratio { positive_fraction: rng.random_range(0.1..0.9), n_total },
        2 => SelectionStrategy::Scheduled {
            per_iteration: (0..3).map(|_| rng.random_range(2..=n_total.max(2))).collect(),
            inner: ScheduleShape::Vanilla,
        },
        _ => SelectionStrategy::TokenRatioFiltered {
            min_l2_ratio: rng.random_range(0.0..0.6),
            inner: Box::new(SelectionStrategy::Vanilla { n_total }),
        },
    };
    let mut cfg = EngineConfig::new(strategy);
    if rng.random_bool(0.3) {
        cfg.ratio_estimate = Some(RatioEstimate::from_counts(rng.random_range(1..50), 50, corpus_len));
    }
    if rng.random_bool(0.2) {
        cfg.max_iterations = Some(rng.random_range(0..6));
    }
    cfg
}

fn exactly_once_and_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..50u64 {
        let spec = selftrain::SyntheticSpec { size: rng.random_range(20..300), seed: case, ..Default::default() };
        let data = selftrain::corpus::generate_synthetic(&spec).unwrap();
        let corpus = &data.train;
        let cfg = random_engine_config(&mut rng, corpus.len());
        let model = BuiltinModel::new(BackendConfig { hash_dim: 1 << 12, seed: case, ..Default::default() }).unwrap();
        let mut backend = Recording::new(model);
        let mut state = zero_shot_init(&mut backend, corpus, &cfg).unwrap();
        state.check_invariants(corpus).map_err(|e| format!("case {case} init: {e}"))?;
        while state.stopped.is_none() {
            iterate_once(&mut state, &mut backend, corpus, &cfg).unwrap();
            state.check_invariants(corpus).map_err(|e| format!("case {case} iteration {}: {e}", state.iteration))?;
        }
        finish(&mut state, &mut backend, corpus, &cfg, None).unwrap();
        let trained: Vec<&String> = backend.batches.iter().flatten().collect();
        let distinct: HashSet<&String> = trained.iter().copied().collect();
        if distinct.len() != trained.len() {
            return Err(format!("case {case}: an utterance was trained on twice"));
        }
        if distinct.len() != state.labeled.len() {
            return Err(format!("case {case}: {} trained vs {} labeled", distinct.len(), state.labeled.len()));
        }
    }

    // counting fixture: 10 positives per round against a quota of 100
    let corpus = Corpus::new("count", (0..1000).map(|i| utterance(&format!("c{i:04}"), &[LangTag::L1], None)).collect()).unwrap();
    let table = Table(corpus.iter().map(|u| (u.id.clone(), ProbVector::new(0.9, 0.1).unwrap())).collect());
    let mut cfg = EngineConfig::new(SelectionStrategy::Ratio { positive_fraction: 0.5, n_total: 20 });
    cfg.ratio_estimate = Some(RatioEstimate::from_counts(5, 50, 1000));
    let r = run_to_completion(&mut Recording::new(table), &corpus, &cfg).unwrap();
    let before: Vec<usize> = r.history().iter().map(|h| h.cumulative_positive).collect();
    let at_boundary = r.stop_reason == StopReason::RatioStop { class: P }
        && r.state.rounds() == 10
        && before[..9].iter().all(|&c| c < 100)
        && before[9] == 100;
    check(
        at_boundary,
        format!("50 random runs conserve and train once; counting fixture stops after {} rounds at {} positives", r.state.rounds(), r.state.cumulative_positive),
    )
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let normal = Normal::new(0.0, 0.5).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for instance in 0..20 {
        let cfg = BackendConfig { hash_dim: 1024, seed: instance, ..Default::default() };
        let mut model = BuiltinModel::new(cfg).unwrap();
        let w0: Vec<f64> = (0..model.weights().len()).map(|_| normal.sample(&mut rng)).collect();
        model.set_weights(w0.clone()).unwrap();
        let examples: Vec<TrainExample> = (0..rng.random_range(1..6))
            .map(|i| {
                let words: Vec<String> = (0..rng.random_range(1..8)).map(|_| format!("w{}", rng.random_range(0..50))).collect();
                TrainExample::from_text(format!("e{i}"), &words.join(" "), if rng.random_bool(0.5) { P } else { N })
            })
            .collect();
        let analytic = model.gradient(&examples);
        let mut numeric = vec![0.0; w0.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            if analytic[j] == 0.0 && !touched(&model, &examples, j) {
                continue;
            }
            let mut w = w0.clone();
            w[j] = w0[j] + h;
            model.set_weights(w.clone()).unwrap();
            let up = model.loss(&examples);
            w[j] = w0[j] - h;
            model.set_weights(w).unwrap();
            let down = model.loss(&examples);
            *slot = (up - down) / (2.0 * h);
        }
        model.set_weights(w0).unwrap();
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rel = diff / (norm(&analytic) + norm(&numeric)).max(1e-300);
        worst = worst.max(rel);
    }
    check(worst < 1e-4, format!("max relative error {worst:.2e} over 20 instances"))
}

/// Whether weight `j` is read by any example (so its finite difference can be non-zero).
fn touched(model: &BuiltinModel, examples: &[TrainExample], j: usize) -> bool {
    let stride = model.config().hash_dim + 1;
    let idx = (j % stride) as u32;
    examples.iter().any(|e| {
        selftrain::backend::featurize_surfaces(e.surfaces.iter().map(String::as_str), model.config()).indices().contains(&idx)
    })
}

fn learning_dynamics() -> Outcome {
    let (mut bucket_wins, mut tv_wins) = (0, 0);
    let mut rows = Vec::new();
    for seed in SEEDS {
        let data = synthetic(seed, 0.5);
        let mut model = pretrained(seed, &data.source);
        let gold = gold_distribution(&data.train);
        let zero = predicted_labels(&model, &data.train);
        run_to_completion(&mut model, &data.train, &vanilla_config(data.train.len())).unwrap();
        let fin = predicted_labels(&model, &data.train);
        let high = |labels: &HashMap<&str, SentimentLabel>| bucket_performance(&data.train, labels).mean_weighted_f1_from(0.6).unwrap();
        let tv = |labels: &HashMap<&str, SentimentLabel>| tv_distance(&gold, &prediction_distribution(&data.train, labels).unwrap()).unwrap();
        let (b0, b1, t0, t1) = (high(&zero), high(&fin), tv(&zero), tv(&fin));
        bucket_wins += usize::from(b1 > b0);
        tv_wins += usize::from(t1 < t0);
        rows.push(format!("{b0:.2}->{b1:.2}/{t0:.3}->{t1:.3}"));
    }
    check(
        bucket_wins >= 8 && tv_wins >= 8,
        format!("high-ratio bucket F1 up in {bucket_wins}/10, TV down in {tv_wins}/10 ({})", rows.join(" ")),
    )
}

fn write_corpus(path: &Path, corpus: &Corpus) {
    let f = std::fs::File::create(path).unwrap();
    write_jsonl(corpus, std::io::BufWriter::new(f)).unwrap();
}

fn cli() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_selftrain"));
    c.env_remove("SELFTRAIN_SEED").env("RUST_LOG", "warn");
    c
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = selftrain::corpus::generate_synthetic(&selftrain::SyntheticSpec { size: 600, seed: 9, ..Default::default() }).unwrap();
    write_corpus(&dir.path().join("train.jsonl"), &data.train);
    write_corpus(&dir.path().join("test.jsonl"), &data.test);
    write_corpus(&dir.path().join("source.jsonl"), &data.source);
    std::fs::write(
        dir.path().join("run.json"),
        r#"{"strategy":{"kind":"vanilla"},"seed":11,"backend":{"kind":"builtin","source":"source.jsonl"}}"#,
    )
    .unwrap();
    let mut outputs = Vec::new();
    for out in ["a", "b"] {
        let status = cli()
            .args(["run", "--config", "run.json", "--corpus", "train.jsonl", "--test-corpus", "test.jsonl", "--out", out])
            .current_dir(dir.path())
            .status()
            .unwrap();
        if !status.success() {
            return Err(format!("run exited with {status}"));
        }
        let read = |f: &str| std::fs::read(dir.path().join(out).join(f)).unwrap();
        outputs.push((read("pseudo_labels.jsonl"), read("run_report.json"), read("metrics.csv")));
    }
    check(
        outputs[0] == outputs[1],
        format!("two runs: pseudo-labels {} bytes, report {} bytes, identical", outputs[0].0.len(), outputs[0].1.len()),
    )
}

fn external_peer(source: &Path, seed: u64) -> Result<ExternalBackend, BackendError> {
    let cmd: Vec<String> = [
        env!("CARGO_BIN_EXE_selftrain-peer"),
        "builtin",
        "--source",
        source.to_str().unwrap(),
        "--seed",
        &seed.to_string(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    ExternalBackend::spawn(&cmd, 16)
}

fn protocol_conformance() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut compared = 0;
    for seed in 0..3u64 {
        let data = selftrain::corpus::generate_synthetic(&selftrain::SyntheticSpec {
            size: 600,
            seed,
            class_prior_positive: 0.7,
            ..Default::default()
        })
        .unwrap();
        let source = dir.path().join(format!("source{seed}.jsonl"));
        write_corpus(&source, &data.source);
        let n = (0.05 * data.train.len() as f64).round() as usize;
        let mut ratio = EngineConfig::new(SelectionStrategy::Ratio { positive_fraction: 0.7, n_total: n });
        ratio.ratio_estimate = Some(estimate_ratio(&data.train, 50, seed, &mut GoldOracle).unwrap());
        for cfg in [EngineConfig::new(SelectionStrategy::Vanilla { n_total: n }), ratio] {
            let local = run_to_completion(&mut pretrained(seed, &data.source), &data.train, &cfg).unwrap();
            let mut peer = external_peer(&source, seed).map_err(|e| e.to_string())?;
            let remote = run_to_completion(&mut peer, &data.train, &cfg).unwrap();
            if local.state.labeled != remote.state.labeled
                || local.state.history != remote.state.history
                || local.stop_reason != remote.stop_reason
            {
                return Err(format!("seed {seed}: peer run diverged from the in-process run ({:?})", cfg.strategy));
            }
            compared += 1;
        }
    }

    // transport failures
    let data = synthetic(0, 0.5);
    let peer = |mode: &[&str]| {
        let mut cmd = vec![env!("CARGO_BIN_EXE_selftrain-peer").to_string()];
        cmd.extend(mode.iter().map(|s| s.to_string()));
        ExternalBackend::spawn(&cmd, 16)
    };
    let cfg = vanilla_config(data.train.len());
    let exit_early = matches!(peer(&["exit"]), Err(BackendError::Lost(_)));
    let died = run_to_completion(&mut peer(&["die-after", "150"]).unwrap(), &data.train, &cfg).unwrap();
    let died_ok = matches!(died.stop_reason, StopReason::BackendLost { .. }) && !died.state.labeled.is_empty();
    let us: Vec<&Utterance> = data.train.iter().take(5).collect();
    let short = peer(&["short"]).unwrap().predict_batch(&us);
    let short_ok = matches!(short, Err(BackendError::Batch { ref source, .. }) if matches!(**source, BackendError::CountMismatch { expected: 5, got: 4 }));
    let garbage = peer(&["garbage"]).unwrap().predict_batch(&us);
    let garbage_ok = matches!(garbage, Err(BackendError::Batch { ref source, .. }) if matches!(**source, BackendError::Protocol { .. }));

    write_corpus(&dir.path().join("train.jsonl"), &data.train);
    let mut codes = Vec::new();
    for mode in [vec!["exit"], vec!["die-after", "3"], vec!["short"]] {
        let mut cmd = vec![env!("CARGO_BIN_EXE_selftrain-peer")];
        cmd.extend(mode);
        let cfg = serde_json::json!({"backend": {"kind": "external", "cmd": cmd}});
        std::fs::write(dir.path().join("ext.json"), cfg.to_string()).unwrap();
        let status = cli()
            .args(["run", "--config", "ext.json", "--corpus", "train.jsonl", "--out", "ext"])
            .current_dir(dir.path())
            .stderr(std::process::Stdio::null())
            .status()
            .unwrap();
        codes.push(status.code());
    }
    let codes_ok = codes.iter().all(|&c| c == Some(3));
    check(
        exit_early && died_ok && short_ok && garbage_ok && codes_ok,
        format!(
            "{compared} peer runs identical to in-process; exit-early {exit_early}, mid-run death {died_ok}, short reply {short_ok}, garbage {garbage_ok}, CLI exit codes {codes:?}"
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("self-training gain", self_training_gain),
        ("ratio beats vanilla under imbalance", ratio_beats_vanilla),
        ("ratio-estimator dispersion", estimator_dispersion),
        ("metric oracle", metric_oracle),
        ("selection correctness", selection_correctness),
        ("exactly-once and conservation", exactly_once_and_conservation),
        ("gradient check", gradient_check),
        ("learning-dynamics shape", learning_dynamics),
        ("determinism", determinism),
        ("protocol conformance", protocol_conformance),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
