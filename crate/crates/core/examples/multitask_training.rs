//! Multi-task intermediate training: sentiment and masked-LM batches drawn by
//! mixing rate, each trained through its own head on a shared encoder, then
//! fine-tuning on the code-switched target.
//!
//! cargo run --release --example multitask_training

use codeswitch::corpus::{Dataset, Examples, Split, TaskKind};
use codeswitch::masking::MaskingPolicy;
use codeswitch::mixer::{mixing_rates, MixtureSpec};
use codeswitch::model::{ModelConfig, OptimizerConfig};
use codeswitch::synth::{BenchmarkSizes, SentimentBenchmark};
use codeswitch::tokenizer::train_vocabulary_from_words;
use codeswitch::trainer::{run_pipeline, Pipeline, StageKind, StageSpec, StageTask};

fn main() -> codeswitch::error::Result<()> {
    let bench = SentimentBenchmark::generate(BenchmarkSizes::default(), 3);
    let vocab = train_vocabulary_from_words(bench.words(), 200)?;
    let sa = |id: &str, split, ex: &[_]| Dataset::new(id, TaskKind::Sa, split, Examples::Classification(ex.to_vec()));
    let bilingual: Vec<_> = bench.en_train.iter().chain(&bench.hi_train).cloned().collect();
    let (train_corpus, dev_corpus) = bench.corpus.split_at(340);
    let mlm = |id: &str, split, s: &[_]| Dataset::new(id, TaskKind::Mlm, split, Examples::Tagged(s.to_vec()));

    let mut multi = StageSpec::new(
        "sa+mlm",
        StageKind::MultiTask,
        vec![
            StageTask {
                train: vec![sa("en+hi-sa", Split::Train, &bilingual)?],
                dev: Some(sa("cs-dev", Split::Dev, &bench.target_dev)?),
                test: None,
            },
            StageTask {
                train: vec![mlm("cs-corpus", Split::Train, train_corpus)?],
                dev: Some(mlm("cs-corpus-dev", Split::Dev, dev_corpus)?),
                test: None,
            },
        ],
    );
    multi.masking = MaskingPolicy::switch_boundary();
    multi.epochs = 4;
    let spec = MixtureSpec::from_sizes([("sa", bilingual.len()), ("mlm", train_corpus.len())], multi.mixing_limit)?;
    println!("mixing rates sa/mlm: {:?}", mixing_rates(&spec));

    let mut fine_tune = StageSpec::new(
        "cs-sa",
        StageKind::FineTune,
        vec![StageTask {
            train: vec![sa("cs-train", Split::Train, &bench.target_train)?],
            dev: Some(sa("cs-dev", Split::Dev, &bench.target_dev)?),
            test: Some(sa("cs-test", Split::Test, &bench.target_test)?),
        }],
    );
    fine_tune.epochs = 10;

    let pipeline = Pipeline {
        model: ModelConfig {
            layers: 2,
            heads: 4,
            d_model: 32,
            d_ff: 64,
            vocab_size: vocab.len(),
            max_len: 16,
            num_labels: 3,
            seed: 0,
        },
        optimizer: OptimizerConfig {
            learning_rate: 1e-3,
            grad_accum_steps: 1,
            warmup_steps: 150,
            ..OptimizerConfig::default()
        },
        vocab,
        stages: vec![multi, fine_tune],
        config_digest: "multitask-example".into(),
    };
    let run = run_pipeline(&pipeline, &[1], 1)?;
    for stage in &run.report.per_seed[0].stages {
        println!(
            "{:<8} steps {:>4}  head updates {:?}  best dev {:?}  skipped sentences {}",
            stage.name, stage.optimizer_steps, stage.head_updates, stage.best_dev, stage.skipped_sentences
        );
    }
    println!("test weighted F1 {:.3}", run.report.mean);
    Ok(())
}
