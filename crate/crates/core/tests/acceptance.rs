//! Acceptance criteria, one check per capability. Runs without the libtest
//! harness so that every criterion prints its own PASS/FAIL line.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use codeswitch::cli::LoadedConfig;
use codeswitch::corpus::{LanguageTag, QaExample, TaggedSentence, TaskKind};
use codeswitch::masking::{boundary_word_indices, make_mlm_example, MaskOutcome, MaskingPolicy, IGNORE_LABEL};
use codeswitch::metrics::{evaluate_token_f1, evaluate_weighted_f1};
use codeswitch::mixer::{mixing_rates, sample_batch_assignments, BatchPlan, MixtureSpec, Source};
use codeswitch::model::{decays, gradient_check, Head, ModelConfig, Parameters};
use codeswitch::synth::{code_switched_corpus, qa_examples, sentiment_examples, BenchmarkSizes, Lexicon, SentimentBenchmark};
use codeswitch::tokenizer::{train_vocabulary_from_words, Vocabulary, MASK};
use codeswitch::trainer::{
    classification_examples, mlm_examples, qa_examples as qa_features, run_pipeline, select_best, should_stop,
    BestTracker, EvalSet, Metric, Snapshot, StoppingRule,
};
use codeswitch::translit::{transliterate_qa_example, Identity, Uppercase, VowelDoubling, WordTransducer};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn sentence(words: &[&str], tags: &[&str]) -> TaggedSentence {
    TaggedSentence::from_parts(words, tags).unwrap()
}

fn random_tagged(rng: &mut ChaCha8Rng, max_len: usize, max_langs: usize) -> TaggedSentence {
    const LANGS: [&str; 3] = ["en", "hi", "es"];
    let len = rng.random_range(1..=max_len);
    let langs = &LANGS[..rng.random_range(1..=max_langs)];
    let tags: Vec<&str> = (0..len).map(|_| *langs.choose(rng).unwrap()).collect();
    let words: Vec<String> = (0..len).map(|i| format!("w{}", i % 7)).collect();
    TaggedSentence::from_parts(&words, &tags).unwrap()
}

fn bilingual_vocab() -> Vocabulary {
    let en = Lexicon::english_like();
    let hi = Lexicon::hindi_like();
    let words: Vec<&str> = en.all_words().chain(hi.all_words()).collect();
    train_vocabulary_from_words(words, 200).unwrap()
}

fn boundary_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..1000 {
        let s = random_tagged(&mut rng, 50, 3);
        let tags: Vec<&LanguageTag> = s.tags().collect();
        let mut expected = BTreeSet::new();
        for i in 0..tags.len() {
            for j in [i.wrapping_sub(1), i + 1] {
                if j < tags.len() && tags[j] != tags[i] {
                    expected.insert(i);
                }
            }
        }
        ensure(boundary_word_indices(&s) == expected, || format!("case {case}: {s:?}"))?;
    }
    let example = sentence(
        &["Yeh", "files", "ko", "desk", "pe", "rakh", "do"],
        &["hi", "en", "hi", "en", "hi", "hi", "hi"],
    );
    let got = boundary_word_indices(&example);
    ensure(got == BTreeSet::from([0, 1, 2, 3, 4]), || format!("example sentence gave {got:?}"))?;
    Ok("1000 random sequences agree; example sentence gives {0,1,2,3,4}".into())
}

fn masking_invariants() -> Outcome {
    let vocab = bilingual_vocab();
    let en = Lexicon::english_like();
    let hi = Lexicon::hindi_like();

    // switch-boundary exclusion over generated and random multi-language sentences
    let mut corpus = code_switched_corpus(&[&en, &hi], 8000, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    corpus.extend((0..2000).map(|_| random_tagged(&mut rng, 20, 3)));
    let sb = MaskingPolicy::switch_boundary();
    let mut sb_examples = 0;
    let mut sb_selected = 0;
    for (i, s) in corpus.iter().enumerate() {
        let enc = vocab.encode_sentence(s, 64).unwrap();
        let allowed = boundary_word_indices(s);
        match make_mlm_example(&enc, s, &sb, vocab.len(), i as u64).unwrap() {
            MaskOutcome::Skipped => ensure(allowed.is_empty(), || format!("sentence {i} skipped with boundaries"))?,
            MaskOutcome::Masked(ex) => {
                sb_examples += 1;
                for &p in &ex.selected {
                    sb_selected += 1;
                    let w = enc.word_index[p].ok_or_else(|| format!("sentence {i}: special token {p} selected"))?;
                    ensure(allowed.contains(&w), || format!("sentence {i}: word {w} is not on a boundary"))?;
                }
                for (p, &label) in ex.labels.iter().enumerate() {
                    ensure((label != IGNORE_LABEL) == ex.selected.contains(&p), || format!("sentence {i}: label mismatch"))?;
                }
            }
        }
    }
    ensure(sb_examples >= 9000, || format!("only {sb_examples} switch-boundary examples"))?;

    // standard selection rate and corruption split
    let standard = MaskingPolicy::standard();
    let big = code_switched_corpus(&[&en, &hi], 20_000, 5);
    let (mut candidates, mut selected) = (0usize, 0usize);
    let (mut masked, mut random, mut kept) = (0usize, 0usize, 0usize);
    for (i, s) in big.iter().enumerate() {
        let enc = vocab.encode_sentence(s, 64).unwrap();
        candidates += enc.word_index.iter().filter(|w| w.is_some()).count();
        let MaskOutcome::Masked(ex) = make_mlm_example(&enc, s, &standard, vocab.len(), 1_000_000 + i as u64).unwrap() else {
            return Err("standard policy skipped a sentence".into());
        };
        selected += ex.selected.len();
        for &p in &ex.selected {
            match ex.input_ids[p] {
                id if id == MASK => masked += 1,
                id if id == enc.token_ids[p] => kept += 1,
                _ => random += 1,
            }
        }
    }
    ensure(candidates >= 100_000, || format!("only {candidates} candidates"))?;
    let rate = selected as f64 / candidates as f64;
    ensure((rate - 0.15).abs() <= 0.01, || format!("selection rate {rate}"))?;
    ensure(selected >= 10_000, || format!("only {selected} selections"))?;
    let frac = |c: usize| c as f64 / selected as f64;
    let split = (frac(masked), frac(random), frac(kept));
    ensure(
        (split.0 - 0.8).abs() <= 0.02 && (split.1 - 0.1).abs() <= 0.02 && (split.2 - 0.1).abs() <= 0.02,
        || format!("corruption split {split:?}"),
    )?;

    // monolingual sentences are always skipped
    for (i, s) in code_switched_corpus(&[&en], 500, 6).iter().enumerate() {
        let enc = vocab.encode_sentence(s, 64).unwrap();
        let out = make_mlm_example(&enc, s, &sb, vocab.len(), i as u64).unwrap();
        ensure(out == MaskOutcome::Skipped, || format!("monolingual sentence {i} was masked"))?;
    }
    Ok(format!(
        "{sb_examples} boundary examples ({sb_selected} selections) stay on boundaries; rate {rate:.4} over {candidates} candidates; split ({:.3}, {:.3}, {:.3})",
        split.0, split.1, split.2
    ))
}

/// Pearson statistic of `draws` against `rates`.
fn chi_square(draws: &[usize], rates: &[f64]) -> f64 {
    let mut counts = vec![0usize; rates.len()];
    for &d in draws {
        counts[d] += 1;
    }
    let n = draws.len() as f64;
    counts
        .iter()
        .zip(rates)
        .map(|(&c, &r)| (c as f64 - n * r).powi(2) / (n * r))
        .sum()
}

fn mixing_math() -> Outcome {
    let spec = MixtureSpec::from_sizes([("a", 250_000), ("b", 82_000)], 100_000).unwrap();
    let rates = mixing_rates(&spec);
    let expected = [100_000.0 / 182_000.0, 82_000.0 / 182_000.0];
    ensure(rates == expected, || format!("rates {rates:?}, expected {expected:?}"))?;
    // upper 0.001 quantiles of chi-square with 1 and 2 degrees of freedom
    let stat = chi_square(&sample_batch_assignments(&spec, 100_000, 7), &rates);
    ensure(stat < 10.828, || format!("two-task chi-square {stat}"))?;

    let spec3 = MixtureSpec::from_sizes([("a", 5_000), ("b", 300_000), ("c", 20_000)], 100_000).unwrap();
    let rates3 = mixing_rates(&spec3);
    let stat3 = chi_square(&sample_batch_assignments(&spec3, 100_000, 8), &rates3);
    ensure(stat3 < 13.816, || format!("three-task chi-square {stat3}"))?;
    Ok(format!("exact rates; chi-square {stat:.3} (df 1), {stat3:.3} (df 2)"))
}

fn interspersal() -> Outcome {
    let mut batches = 0;
    for b in [2usize, 7, 8] {
        for (en_len, x_len) in [(1, 1), (37, 50), (50, 37), (240, 240), (13, 200), (200, 13), (9, 10)] {
            let plan = BatchPlan::interspersed(Source::new("en", en_len), Source::new("x", x_len), b, 3).unwrap();
            let mut seen = [BTreeSet::new(), BTreeSet::new()];
            for (i, batch) in plan.batches.iter().enumerate() {
                let diff = batch.count(0) as i64 - batch.count(1) as i64;
                ensure(diff == 0 || diff == 1, || format!("B={b} sizes ({en_len},{x_len}) batch {i}: difference {diff}"))?;
                ensure(batch.len() <= b && !batch.is_empty(), || format!("B={b} batch {i} has {} slots", batch.len()))?;
                for s in &batch.slots {
                    seen[s.source].insert(s.example);
                }
            }
            // the pass covers the larger source; the smaller one only has to fill its slots
            let per_en = b.div_ceil(2);
            let per_x = b / 2;
            if en_len.div_ceil(per_en) >= x_len.div_ceil(per_x) {
                ensure(seen[0].len() == en_len, || format!("B={b} ({en_len},{x_len}): en not covered"))?;
            } else {
                ensure(seen[1].len() == x_len, || format!("B={b} ({en_len},{x_len}): x not covered"))?;
            }
            batches += plan.batches.len();

            let seq = BatchPlan::sequential(Source::new("en", en_len), Source::new("x", x_len), b, 3).unwrap();
            let order: Vec<usize> = seq.batches.iter().map(|batch| batch.slots[0].source).collect();
            for batch in &seq.batches {
                ensure(batch.count(0) == 0 || batch.count(1) == 0, || format!("B={b}: sequential batch mixes sources"))?;
            }
            ensure(order.windows(2).all(|w| w[0] <= w[1]), || format!("B={b}: sequential sources interleave"))?;
        }
    }
    Ok(format!("{batches} interspersed batches balanced; sequential plans never interleave"))
}

fn random_word(rng: &mut ChaCha8Rng) -> String {
    const LETTERS: &[char] = &['a', 'e', 'i', 'o', 'u', 'k', 'r', 's', 't', 'n', 'h', 'é', 'ü', 'x'];
    (0..rng.random_range(1..=7)).map(|_| *LETTERS.choose(rng).unwrap()).collect()
}

fn span_correction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let transducers: [(&str, &dyn WordTransducer); 3] =
        [("identity", &Identity), ("uppercase", &Uppercase), ("vowel-doubling", &VowelDoubling)];
    let mut checked = 0;
    for case in 0..1000 {
        let words: Vec<String> = (0..rng.random_range(1..=30)).map(|_| random_word(&mut rng)).collect();
        let first = rng.random_range(0..words.len());
        let last = rng.random_range(first..words.len().min(first + 4));
        let context = words.join(" ");
        let answer_start = words[..first].iter().map(|w| w.chars().count() + 1).sum();
        let example = QaExample {
            context: context.clone(),
            question: format!("{} {}", random_word(&mut rng), random_word(&mut rng)),
            answer_text: words[first..=last].join(" "),
            answer_start,
            language: LanguageTag::new("hi").unwrap(),
        };
        for (name, t) in transducers {
            let c = transliterate_qa_example(&example, t).map_err(|e| format!("case {case} {name}: {e}"))?;
            let extracted: String = c.new_context.chars().skip(c.new_start).take(c.new_answer.chars().count()).collect();
            ensure(c.verified && extracted == c.new_answer, || format!("case {case} {name}: {c:?}"))?;
            if name == "identity" {
                ensure(
                    c.new_context == context && c.new_answer == example.answer_text && c.new_start == answer_start && c.new_question == example.question,
                    || format!("case {case}: identity changed the example"),
                )?;
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} corrected spans verified"))
}

fn gradient_fidelity() -> Outcome {
    let vocab = bilingual_vocab();
    let config = ModelConfig {
        layers: 2,
        heads: 4,
        d_model: 32,
        d_ff: 64,
        vocab_size: 200,
        max_len: 16,
        num_labels: 3,
        seed: 5,
    };
    ensure(vocab.len() <= config.vocab_size, || format!("vocabulary has {} tokens", vocab.len()))?;
    // larger than usual weights keep gradients well above finite-difference noise
    let mut params = Parameters::init(&config, config.seed);
    for t in params.tensors_mut() {
        if decays(&t.name) {
            t.data.iter_mut().for_each(|x| *x *= 10.0);
        }
    }
    let en = Lexicon::english_like();
    let hi = Lexicon::hindi_like();
    let corpus = code_switched_corpus(&[&en, &hi], 6, 10);
    let (mlm, _) = mlm_examples(&corpus, &vocab, config.max_len, &MaskingPolicy { select_rate: 0.4, ..MaskingPolicy::switch_boundary() }, 1).unwrap();
    let cls = classification_examples(TaskKind::Sa, &sentiment_examples(&[&en, &hi], 3, "cs", 11), &vocab, config.max_len).unwrap();
    let (span, _) = qa_features(&qa_examples(&[&en, &hi], 6, 12), &vocab, config.max_len).unwrap();
    let mut parts = Vec::new();
    for (head, batch) in [(Head::Mlm, &mlm[..3.min(mlm.len())]), (Head::Classify, &cls[..]), (Head::Span, &span[..3.min(span.len())])] {
        ensure(!batch.is_empty(), || format!("{head:?}: no examples"))?;
        let report = gradient_check(&config, &params, batch, head, 1e-5).map_err(|e| e.to_string())?;
        ensure(report.max_relative_error < 1e-4, || format!("{head:?}: {report:?}"))?;
        parts.push(format!("{head:?} {:.2e} ({} of {} coordinates at noise level)", report.max_relative_error, report.below_noise, report.coordinates));
    }
    Ok(format!("max relative error {}", parts.join(", ")))
}

fn token_f1_oracle(pred: &str, gold: &str) -> f64 {
    let p: Vec<&str> = pred.split_whitespace().collect();
    let g: Vec<&str> = gold.split_whitespace().collect();
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let mut used = vec![false; g.len()];
    let mut common = 0;
    for t in &p {
        if let Some(j) = (0..g.len()).find(|&j| !used[j] && g[j] == *t) {
            used[j] = true;
            common += 1;
        }
    }
    if common == 0 {
        return 0.0;
    }
    let (pr, rc) = (common as f64 / p.len() as f64, common as f64 / g.len() as f64);
    2.0 * pr * rc / (pr + rc)
}

fn weighted_f1_oracle(pred: &[usize], gold: &[usize], k: usize) -> f64 {
    let mut m = vec![vec![0usize; k]; k];
    for (&p, &g) in pred.iter().zip(gold) {
        m[g][p] += 1;
    }
    let mut total = 0.0;
    for c in 0..k {
        let support: usize = m[c].iter().sum();
        if support == 0 {
            continue;
        }
        let predicted: usize = (0..k).map(|r| m[r][c]).sum();
        let tp = m[c][c] as f64;
        let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let r = tp / support as f64;
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        total += f * support as f64 / gold.len() as f64;
    }
    total
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let vocab = ["the", "desk", "a", "files", "ko", "pe"];
    let phrase = |rng: &mut ChaCha8Rng| {
        let n = rng.random_range(0..=6);
        (0..n).map(|_| *vocab.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
    };
    for case in 0..500 {
        let (p, g) = (phrase(&mut rng), phrase(&mut rng));
        let got = evaluate_token_f1(&p, &g).f1;
        ensure(got == token_f1_oracle(&p, &g), || format!("case {case}: {p:?} vs {g:?} gave {got}"))?;
    }
    let desk = evaluate_token_f1("the desk", "desk").f1;
    ensure(desk == 2.0 / 3.0, || format!("\"the desk\" vs \"desk\" gave {desk}"))?;

    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let k = rng.random_range(2..=5);
        let n = rng.random_range(1..=60);
        let gold: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let labels: Vec<usize> = (0..k).collect();
        let got = evaluate_weighted_f1(&pred, &gold, &labels).unwrap().f1;
        let diff = (got - weighted_f1_oracle(&pred, &gold, k)).abs();
        worst = worst.max(diff);
        ensure(diff <= 1e-12, || format!("case {case}: weighted F1 off by {diff}"))?;
    }
    Ok(format!("500 token-F1 pairs exact; \"the desk\"/\"desk\" = 2/3; weighted F1 max deviation {worst:.1e}"))
}

fn synthetic_config(data: &Path) -> String {
    let sample = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/sample/config.json");
    let mut config: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(sample).unwrap()).unwrap();
    for ds in config["datasets"].as_object_mut().unwrap().values_mut() {
        let name = Path::new(ds["path"].as_str().unwrap()).file_name().unwrap().to_str().unwrap().to_string();
        ds["path"] = data.join(name).to_str().unwrap().into();
    }
    config["seeds"] = serde_json::json!([7]);
    config.to_string()
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let bench = SentimentBenchmark::generate(BenchmarkSizes::default(), 2024);
    bench.write(dir.path()).map_err(|e| e.to_string())?;
    let loaded = LoadedConfig::from_json(&synthetic_config(dir.path()), dir.path()).map_err(|e| e.to_string())?;
    let pipeline = loaded.pipeline().map_err(|e| e.to_string())?;
    let stages: Vec<&str> = pipeline.stages.iter().map(|s| s.name.as_str()).collect();
    ensure(stages == ["cs-mlm", "bilingual-sa", "cs-sa"], || format!("stages {stages:?}"))?;

    let mut reports = Vec::new();
    let mut accuracy = 0.0;
    let mut slowest = Duration::ZERO;
    for _ in 0..2 {
        let start = Instant::now();
        let run = run_pipeline(&pipeline, &loaded.config.seeds, 1).map_err(|e| e.to_string())?;
        slowest = slowest.max(start.elapsed());
        let dev = EvalSet::classification(TaskKind::Sa, &bench.target_dev, &pipeline.vocab, pipeline.model.max_len)
            .unwrap()
            .with_metric(Metric::Accuracy);
        accuracy = dev.score(&pipeline.model, &run.runs[0].params).unwrap();
        reports.push(serde_json::to_string(&run.report).unwrap());
    }
    ensure(accuracy >= 0.95, || format!("dev accuracy {accuracy}"))?;
    ensure(slowest < Duration::from_secs(300), || format!("run took {slowest:?}"))?;
    ensure(reports[0] == reports[1], || "reports of identical runs differ".into())?;
    Ok(format!("dev accuracy {accuracy:.3}, {:.1} s per run, identical reports", slowest.as_secs_f64()))
}

fn stopping_rules() -> Outcome {
    let range = StoppingRule::TrainAccuracyRange { lo: 0.70, hi: 0.80 };
    let acc = |a| Snapshot { train_acc: Some(a), ..Snapshot::default() };
    let stops = |rule: &StoppingRule, s: Snapshot| should_stop(rule, &s).unwrap();
    ensure(stops(&range, acc(0.75)), || "range rule ignored 0.75".into())?;
    ensure(!stops(&range, acc(0.69)) && !stops(&range, acc(0.81)), || "range rule fired outside the range".into())?;
    let loss = StoppingRule::TrainLossBelow { threshold: 0.1 };
    let l = |v| Snapshot { train_loss: Some(v), ..Snapshot::default() };
    ensure(stops(&loss, l(0.09)) && !stops(&loss, l(0.2)), || "loss rule misfired".into())?;

    let trace = [0.41, 0.55, 0.62, 0.60, 0.71, 0.69, 0.71, 0.50];
    ensure(select_best(&trace) == Some(4), || format!("select_best gave {:?}", select_best(&trace)))?;
    let mut tracker = BestTracker::new();
    for (i, &score) in trace.iter().enumerate() {
        ensure(!stops(&StoppingRule::DevMetricBest, Snapshot { dev_metric: Some(score), ..Snapshot::default() }), || {
            "dev-best rule stopped training".into()
        })?;
        tracker.offer(score, i as u64, || format!("checkpoint-{i}"));
    }
    let kept = tracker.into_inner();
    ensure(kept.as_deref() == Some("checkpoint-4"), || format!("kept {kept:?}"))?;
    Ok("range, loss and dev-best rules behave on scripted traces".into())
}

fn cli_smoke() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_codeswitch");
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/sample/config.json");
    let out = tempfile::tempdir().unwrap();
    let run = Command::new(bin)
        .args(["run-experiment", "--config"])
        .arg(&config)
        .arg("--output-dir")
        .arg(out.path())
        .output()
        .unwrap();
    ensure(run.status.code() == Some(0), || format!("exit {:?}: {}", run.status, String::from_utf8_lossy(&run.stderr)))?;
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.path().join("report.json")).unwrap()).unwrap();
    let per_seed = report["per_seed"].as_array().ok_or("report has no per_seed array")?;
    ensure(per_seed.len() == 2 && report["mean"].is_f64() && report["max"].is_f64(), || format!("report {report}"))?;

    let bad_dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(&config).unwrap().replace(r#""epochs": 10"#, r#""epochs": "ten""#);
    let bad = bad_dir.path().join("config.json");
    std::fs::write(&bad, text).unwrap();
    let run = Command::new(bin).args(["run-experiment", "--config"]).arg(&bad).output().unwrap();
    let stderr = String::from_utf8_lossy(&run.stderr);
    ensure(run.status.code() == Some(2), || format!("malformed config exited with {:?}", run.status))?;
    ensure(stderr.contains("stages[2].epochs"), || format!("diagnostic does not name the field: {stderr}"))?;
    Ok(format!("report with {} seeds, mean {:.3}; malformed config: {}", per_seed.len(), report["mean"], stderr.trim()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("boundary oracle", boundary_oracle, Duration::from_secs(5)),
        ("masking invariants", masking_invariants, Duration::from_secs(30)),
        ("mixing math", mixing_math, Duration::from_secs(10)),
        ("interspersal", interspersal, Duration::from_secs(10)),
        ("span correction", span_correction, Duration::from_secs(10)),
        ("gradient fidelity", gradient_fidelity, Duration::from_secs(120)),
        ("metric oracles", metric_oracles, Duration::MAX),
        ("end-to-end synthetic", end_to_end, Duration::MAX),
        ("stopping rules", stopping_rules, Duration::MAX),
        ("cli smoke", cli_smoke, Duration::MAX),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let (mut passed, mut failed) = (0, 0);
    for (i, (name, check, limit)) in criteria.into_iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let result = result.and_then(|d| if elapsed < limit { Ok(d) } else { Err(format!("took {elapsed:?}, limit {limit:?}")) });
        let ok = result.is_ok();
        let detail = result.unwrap_or_else(|e| e);
        println!("{} criterion {:>2} {name} ({:.2} s): {detail}", if ok { "PASS" } else { "FAIL" }, i + 1, elapsed.as_secs_f64());
        if ok {
            passed += 1;
        } else {
            failed += 1;
        }
    }
    println!("acceptance: {passed} passed, {failed} failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
