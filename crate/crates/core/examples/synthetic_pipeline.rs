//! Code-switched MLM, then bilingual sentiment training, then fine-tuning on
//! code-switched sentiment, all on generated pseudo-language data.
//!
//! cargo run --release --example synthetic_pipeline

use std::time::Instant;

use codeswitch::corpus::{Dataset, Examples, Split, TaskKind};
use codeswitch::masking::MaskingPolicy;
use codeswitch::model::{ModelConfig, OptimizerConfig};
use codeswitch::synth::{BenchmarkSizes, SentimentBenchmark};
use codeswitch::tokenizer::train_vocabulary_from_words;
use codeswitch::trainer::{
    run_pipeline, EvalSet, Metric, Pipeline, Schedule, StageKind, StageSpec, StageTask, StoppingRule,
};

fn main() -> codeswitch::error::Result<()> {
    let bench = SentimentBenchmark::generate(BenchmarkSizes::default(), 0);
    let vocab = train_vocabulary_from_words(bench.words(), 200)?;
    let sa = |id: &str, split, ex: &[_]| Dataset::new(id, TaskKind::Sa, split, Examples::Classification(ex.to_vec()));
    let dev = sa("cs-dev", Split::Dev, &bench.target_dev)?;

    let mut mlm = StageSpec::new(
        "cs-mlm",
        StageKind::MlmPretrain,
        vec![StageTask {
            train: vec![Dataset::new("cs-corpus", TaskKind::Mlm, Split::Train, Examples::Tagged(bench.corpus.clone()))?],
            dev: None,
            test: None,
        }],
    );
    mlm.masking = MaskingPolicy::switch_boundary();
    mlm.epochs = 2;
    mlm.batch_size = 16;
    mlm.stopping = StoppingRule::FixedEpochs { epochs: 2 };

    let mut bilingual = StageSpec::new(
        "bilingual-sa",
        StageKind::SingleTask,
        vec![StageTask {
            train: vec![sa("en-sa", Split::Train, &bench.en_train)?, sa("hi-sa", Split::Train, &bench.hi_train)?],
            dev: Some(dev.clone()),
            test: None,
        }],
    );
    bilingual.schedule = Schedule::Interspersed;
    bilingual.epochs = 8;
    bilingual.batch_size = 8;

    let mut fine_tune = StageSpec::new(
        "cs-sa",
        StageKind::FineTune,
        vec![StageTask {
            train: vec![sa("cs-sa", Split::Train, &bench.target_train)?],
            dev: Some(dev),
            test: Some(sa("cs-test", Split::Test, &bench.target_test)?),
        }],
    );
    fine_tune.epochs = 10;
    fine_tune.batch_size = 8;

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
        vocab: vocab.clone(),
        stages: vec![mlm, bilingual, fine_tune],
        config_digest: "synthetic".into(),
    };

    let seeds: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let seeds = if seeds.is_empty() { vec![42] } else { seeds };
    let dev_set = EvalSet::classification(TaskKind::Sa, &bench.target_dev, &vocab, 16)?.with_metric(Metric::Accuracy);
    for seed in seeds {
        let start = Instant::now();
        let run = run_pipeline(&pipeline, &[seed], 1)?;
        println!("seed {seed}");
        for stage in &run.report.per_seed[0].stages {
            println!("  {:<14} steps {:>4}  best dev {:?}", stage.name, stage.optimizer_steps, stage.best_dev);
        }
        let dev_acc = dev_set.score(&pipeline.model, &run.runs[0].params)?;
        println!("  dev accuracy {dev_acc:.3}, test weighted F1 {:.3}, {:.1?}", run.report.mean, start.elapsed());
    }
    Ok(())
}
