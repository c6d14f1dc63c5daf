//! Command-line front end. The `codeswitch` binary only calls [`main`].
//!
//! Exit status: 0 on success, 2 for malformed configs, bad arguments and
//! missing files, 3 when training produces non-finite values, 1 otherwise.

mod config;

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::{
    DatasetSpec, ExperimentConfig, LoadedConfig, MixtureSection, ModelSection, StageConfig, TaskConfig,
    TransducerSpec, VocabularySpec, DEFAULT_SEEDS,
};

use crate::corpus::{
    filter_nli_examples, merge_bilingual_dataset, read_classification_tsv, read_qa_jsonl, read_tagged_jsonl,
    split_premise_dialogues, write_classification_tsv, write_qa_jsonl, write_tagged_jsonl, ClassificationExample,
    Dataset, Examples, Split, TaskKind,
};
use crate::error::{Error, Result};
use crate::masking::{mask_corpus, write_masked_jsonl, MaskingKind, MaskingPolicy};
use crate::mixer::derive_seed;
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, ModelConfig};
use crate::tokenizer::{train_vocabulary, train_vocabulary_from_words, Vocabulary};
use crate::trainer::{metric_for, run_pipeline, stage_plans, EvalSet, Pipeline, PipelineRun, RunReport};
use crate::translit::{
    builtin, transliterate_classification_example, transliterate_qa_example, LookupTable, WordTransducer,
};

#[derive(Debug, Parser)]
#[command(name = "codeswitch", version, about = "Training recipes for code-switched NLP tasks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split, filter, merge or transliterate a dataset file.
    PrepareData(PrepareDataArgs),
    /// Mask a tagged corpus and write the MLM examples as JSONL.
    MaskDump(MaskDumpArgs),
    /// Train one seed of an experiment and save its checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on the target task's dev or test set.
    Evaluate(EvaluateArgs),
    /// Run every seed of an experiment and write the report.
    RunExperiment(RunArgs),
}

#[derive(Debug, Args)]
pub struct PrepareDataArgs {
    #[arg(long, value_parser = parse_task)]
    pub task: TaskKind,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Split NLI premises into dialogue turns, one example per turn.
    #[arg(long)]
    pub split_dialogues: bool,
    /// Shortest dialogue turn kept by --split-dialogues.
    #[arg(long, default_value_t = crate::corpus::MIN_DIALOGUE_WORDS)]
    pub min_words: usize,
    /// Keep only these labels (and drop examples flagged invalid).
    #[arg(long, value_delimiter = ',')]
    pub keep_labels: Vec<String>,
    /// Append a second training file of the same task (bilingual merge).
    #[arg(long)]
    pub merge: Option<PathBuf>,
    /// Built-in transducer: identity, uppercase or vowel-doubling.
    #[arg(long, conflicts_with = "table")]
    pub transliterate: Option<String>,
    /// Two-column TSV lookup table used as the transducer.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Also train a vocabulary on the output and save it here.
    #[arg(long)]
    pub vocab_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub vocab_size: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    Standard,
    SwitchBoundary,
}

#[derive(Debug, Args)]
pub struct MaskDumpArgs {
    /// Tagged corpus (JSONL of {words, tags}).
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, conflicts_with = "vocab_size")]
    pub vocab: Option<PathBuf>,
    /// Train a vocabulary of this size on the corpus instead of loading one.
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long, value_enum, default_value = "standard")]
    pub policy: PolicyArg,
    #[arg(long, default_value_t = 0.15)]
    pub select_rate: f64,
    #[arg(long)]
    pub whole_word: bool,
    #[arg(long, default_value_t = 64)]
    pub max_len: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Defaults to the first seed of the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Dev,
    Test,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated seeds; overrides the config.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Seeds trained concurrently.
    #[arg(long)]
    pub workers: Option<usize>,
}

fn parse_task(s: &str) -> std::result::Result<TaskKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown task {s:?}; expected mlm, nli, sa or qa"))
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite(_) => 3,
        Error::Config { .. }
        | Error::Parse { .. }
        | Error::Json(_)
        | Error::Pipeline(_)
        | Error::InvalidArgument(_)
        | Error::TaskMismatch { .. }
        | Error::InvalidTag(_) => 2,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

/// Parses `std::env::args`, runs the command and reports errors on stderr.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::PrepareData(a) => print_json(&prepare_data(&a)?),
        Command::MaskDump(a) => print_json(&mask_dump(&a)?),
        Command::Train(a) => print_json(&train(&a)?),
        Command::Evaluate(a) => print_json(&evaluate(&a)?),
        Command::RunExperiment(a) => {
            let out = run_experiment(&a)?;
            print_json(&out.run.report)?;
            eprintln!("wrote {}", out.output_dir.display());
            Ok(())
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    // a closed stdout (e.g. piped into `head`) is not a failure
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_jsonl(path: &Path, records: impl IntoIterator<Item = serde_json::Value>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn with_digest(value: impl Serialize, digest: &str) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(value)?;
    v["config_digest"] = digest.into();
    Ok(v)
}

/// Outputs of `prepare-data`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrepareSummary {
    pub input_examples: usize,
    pub output_examples: usize,
    /// QA examples whose span failed verification after transliteration.
    pub rejected: usize,
    pub config_digest: String,
}

fn load_any(task: TaskKind, path: &Path) -> Result<Examples> {
    let provenance = path.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    Ok(match task {
        TaskKind::Mlm => Examples::Tagged(read_tagged_jsonl(path)?),
        TaskKind::Qa => Examples::Qa(read_qa_jsonl(path)?),
        TaskKind::Nli | TaskKind::Sa => Examples::Classification(read_classification_tsv(path, provenance)?),
    })
}

fn transducer_from_flags(name: Option<&str>, table: Option<&Path>) -> Result<Option<Box<dyn WordTransducer>>> {
    match (name, table) {
        (Some(n), _) => builtin(n)
            .map(Some)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown transducer {n:?}"))),
        (None, Some(t)) => Ok(Some(Box::new(LookupTable::load_tsv(t)?))),
        (None, None) => Ok(None),
    }
}

/// Applies dialogue splitting, label filtering, merging and transliteration,
/// in that order, then writes the result next to a `.meta.json` sidecar.
pub fn prepare_data(a: &PrepareDataArgs) -> Result<PrepareSummary> {
    let mut hasher = Sha256::new();
    hasher.update(format!("{a:?}"));
    hasher.update(fs::read(&a.input).map_err(|e| Error::io(&a.input, e))?);
    let mut examples = load_any(a.task, &a.input)?;
    let input_examples = examples.len();

    if a.split_dialogues {
        let Examples::Classification(items) = &examples else {
            return Err(Error::InvalidArgument("--split-dialogues applies to NLI data".into()));
        };
        let split: Vec<ClassificationExample> = items
            .iter()
            .flat_map(|ex| {
                split_premise_dialogues(&ex.text_a, a.min_words)
                    .into_iter()
                    .map(move |turn| ClassificationExample {
                        text_a: turn,
                        ..ex.clone()
                    })
            })
            .collect();
        examples = Examples::Classification(split);
    }
    if !a.keep_labels.is_empty() {
        let Examples::Classification(items) = &examples else {
            return Err(Error::InvalidArgument("--keep-labels applies to classification data".into()));
        };
        let keep: BTreeSet<String> = a.keep_labels.iter().cloned().collect();
        examples = Examples::Classification(filter_nli_examples(items, &keep));
    }
    if let Some(other) = &a.merge {
        hasher.update(fs::read(other).map_err(|e| Error::io(other, e))?);
        let first = Dataset::new("first", a.task, Split::Train, examples)?;
        let second = Dataset::new("second", a.task, Split::Train, load_any(a.task, other)?)?;
        examples = merge_bilingual_dataset(&first, &second)?.examples().clone();
    }
    let mut rejected = 0;
    if let Some(t) = transducer_from_flags(a.transliterate.as_deref(), a.table.as_deref())? {
        if let Some(table) = &a.table {
            hasher.update(fs::read(table).map_err(|e| Error::io(table, e))?);
        }
        examples = match examples {
            Examples::Tagged(_) => {
                return Err(Error::InvalidArgument("tagged corpora are not transliterated".into()));
            }
            Examples::Classification(items) => Examples::Classification(
                items
                    .iter()
                    .map(|ex| transliterate_classification_example(ex, t.as_ref()))
                    .collect::<Result<_>>()?,
            ),
            Examples::Qa(items) => {
                let mut out = Vec::with_capacity(items.len());
                for ex in &items {
                    match transliterate_qa_example(ex, t.as_ref())?.into_example(ex) {
                        Some(e) => out.push(e),
                        None => rejected += 1,
                    }
                }
                Examples::Qa(out)
            }
        };
    }

    match &examples {
        Examples::Tagged(s) => write_tagged_jsonl(&a.output, s)?,
        Examples::Classification(c) => write_classification_tsv(&a.output, c)?,
        Examples::Qa(q) => write_qa_jsonl(&a.output, q)?,
    }
    let digest = hex::encode(hasher.finalize());
    if let Some(vocab_out) = &a.vocab_out {
        let vocab = match &examples {
            Examples::Tagged(s) => train_vocabulary(s, a.vocab_size, 0)?,
            Examples::Classification(c) => train_vocabulary_from_words(
                c.iter()
                    .flat_map(|e| e.text_a.split_whitespace().chain(e.text_b.iter().flat_map(|b| b.split_whitespace()))),
                a.vocab_size,
            )?,
            Examples::Qa(q) => train_vocabulary_from_words(
                q.iter()
                    .flat_map(|e| e.context.split_whitespace().chain(e.question.split_whitespace())),
                a.vocab_size,
            )?,
        };
        vocab.save(vocab_out)?;
    }
    let summary = PrepareSummary {
        input_examples,
        output_examples: examples.len(),
        rejected,
        config_digest: digest,
    };
    let mut meta = a.output.clone().into_os_string();
    meta.push(".meta.json");
    write_json(Path::new(&meta), &summary)?;
    Ok(summary)
}

/// Outputs of `mask-dump`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskSummary {
    pub sentences: usize,
    pub examples: usize,
    pub skipped: usize,
    pub masked_tokens: usize,
    pub config_digest: String,
}

/// Masks a corpus and writes `masked.jsonl` and `mask_summary.json` under
/// the output directory.
pub fn mask_dump(a: &MaskDumpArgs) -> Result<MaskSummary> {
    let corpus = read_tagged_jsonl(&a.corpus)?;
    let vocab = match (&a.vocab, a.vocab_size) {
        (Some(p), _) => Vocabulary::load(p)?,
        (None, Some(n)) => train_vocabulary(&corpus, n, 0)?,
        (None, None) => return Err(Error::InvalidArgument("give --vocab or --vocab-size".into())),
    };
    let policy = MaskingPolicy {
        kind: match a.policy {
            PolicyArg::Standard => MaskingKind::Standard,
            PolicyArg::SwitchBoundary => MaskingKind::SwitchBoundary,
        },
        select_rate: a.select_rate,
        whole_word: a.whole_word,
        ..MaskingPolicy::standard()
    };
    policy.validate()?;
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(&policy)?);
    hasher.update(format!("{}:{}", a.max_len, a.seed));
    hasher.update(fs::read(&a.corpus).map_err(|e| Error::io(&a.corpus, e))?);
    hasher.update(vocab.tokens().join("\n"));
    let digest = hex::encode(hasher.finalize());

    let masked = mask_corpus(&corpus, &vocab, a.max_len, &policy, a.seed)?;
    create_dir(&a.output_dir)?;
    write_masked_jsonl(
        a.output_dir.join("masked.jsonl"),
        masked.examples.iter().map(|(_, ex)| ex),
        Some(&digest),
    )?;
    let summary = MaskSummary {
        sentences: corpus.len(),
        examples: masked.examples.len(),
        skipped: masked.skipped,
        masked_tokens: masked.examples.iter().map(|(_, ex)| ex.selected.len()).sum(),
        config_digest: digest,
    };
    write_json(&a.output_dir.join("mask_summary.json"), &summary)?;
    Ok(summary)
}

/// A finished `run-experiment`.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub pipeline: Pipeline,
    pub run: PipelineRun,
    pub output_dir: PathBuf,
}

/// Loads the config and applies flag overrides (flags beat the config,
/// which beats the defaults).
fn load_with_overrides(path: &Path, seeds: Option<&[u64]>, output_dir: Option<&Path>, workers: Option<usize>) -> Result<LoadedConfig> {
    let mut loaded = LoadedConfig::from_file(path)?;
    if let Some(s) = seeds {
        if s.is_empty() {
            return Err(Error::Config {
                field: "seeds".into(),
                message: "at least one seed is required".into(),
            });
        }
        loaded.config.seeds = s.to_vec();
    }
    if let Some(w) = workers {
        if w == 0 {
            return Err(Error::InvalidArgument("--workers must be at least 1".into()));
        }
        loaded.config.workers = w;
    }
    if let Some(dir) = output_dir {
        // flag paths are relative to the working directory, not the config
        loaded.config.output_dir = std::path::absolute(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(loaded)
}

fn write_run_artifacts(pipeline: &Pipeline, run: &PipelineRun, seeds: &[u64], dir: &Path) -> Result<()> {
    let digest = &pipeline.config_digest;
    create_dir(dir)?;
    create_dir(&dir.join("checkpoints"))?;
    write_json(&dir.join("report.json"), &run.report)?;
    let logs = run
        .runs
        .iter()
        .flat_map(|r| &r.logs)
        .map(|l| with_digest(l, digest))
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(&dir.join("train_log.jsonl"), logs)?;

    let seed = seeds[0];
    let mut plan_records = Vec::new();
    for (stage, plan) in pipeline.stages.iter().zip(stage_plans(pipeline, seed)?) {
        for mut rec in plan.batch_records() {
            rec["stage"] = stage.name.clone().into();
            rec["seed"] = seed.into();
            rec["config_digest"] = digest.clone().into();
            plan_records.push(rec);
        }
    }
    write_jsonl(&dir.join("plan.jsonl"), plan_records)?;

    for r in &run.runs {
        let steps = r.result.stages.iter().map(|s| s.optimizer_steps).sum();
        let ckpt = Checkpoint::new(&pipeline.model, steps, &r.params, None, Some(digest));
        save_checkpoint(&dir.join("checkpoints").join(format!("seed-{}.json", r.result.seed)), &ckpt)?;
    }
    Ok(())
}

/// Runs every seed and writes `report.json`, `train_log.jsonl`,
/// `plan.jsonl` and `checkpoints/seed-<n>.json`.
pub fn run_experiment(a: &RunArgs) -> Result<ExperimentOutcome> {
    let loaded = load_with_overrides(&a.config, a.seeds.as_deref(), a.output_dir.as_deref(), a.workers)?;
    let pipeline = loaded.pipeline()?;
    let seeds = &loaded.config.seeds;
    let run = run_pipeline(&pipeline, seeds, loaded.config.workers)?;
    let output_dir = loaded.output_dir();
    write_run_artifacts(&pipeline, &run, seeds, &output_dir)?;
    Ok(ExperimentOutcome {
        pipeline,
        run,
        output_dir,
    })
}

/// Trains a single seed; writes the same artifacts as `run-experiment`.
pub fn train(a: &TrainArgs) -> Result<RunReport> {
    let mut loaded = load_with_overrides(&a.config, None, a.output_dir.as_deref(), None)?;
    if let Some(s) = a.seed {
        loaded.config.seeds = vec![s];
    } else {
        loaded.config.seeds.truncate(1);
    }
    let pipeline = loaded.pipeline()?;
    let run = run_pipeline(&pipeline, &loaded.config.seeds, 1)?;
    write_run_artifacts(&pipeline, &run, &loaded.config.seeds, &loaded.output_dir())?;
    Ok(run.report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub split: String,
    pub metric: String,
    pub score: f64,
    pub examples: usize,
    pub config_digest: String,
}

fn eval_set(ds: &Dataset, config: &ModelConfig, pipeline: &Pipeline) -> Result<EvalSet> {
    let stage = pipeline.stages.last().expect("validated");
    match ds.examples() {
        Examples::Tagged(s) => EvalSet::mlm(s, &pipeline.vocab, config.max_len, &stage.masking, derive_seed(config.seed, 0xE7A1)),
        Examples::Classification(c) => EvalSet::classification(ds.task(), c, &pipeline.vocab, config.max_len),
        Examples::Qa(q) => EvalSet::qa(q, &pipeline.vocab, config.max_len),
    }
}

/// Scores a checkpoint on the target task of the config's last stage.
pub fn evaluate(a: &EvaluateArgs) -> Result<Evaluation> {
    let loaded = LoadedConfig::from_file(&a.config)?;
    let pipeline = loaded.pipeline()?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    if ckpt.config_digest.as_deref() != Some(pipeline.config_digest.as_str()) {
        return Err(Error::Config {
            field: "checkpoint".into(),
            message: "checkpoint was written for a different config".into(),
        });
    }
    let params = ckpt.parameters()?;
    let target = &pipeline.stages.last().expect("validated").tasks[0];
    let (name, ds) = match a.split {
        SplitArg::Dev => ("dev", target.dev.as_ref()),
        SplitArg::Test => ("test", target.test.as_ref()),
    };
    let ds = ds.ok_or_else(|| Error::InvalidArgument(format!("the target task has no {name} set")))?;
    let set = eval_set(ds, &ckpt.config, &pipeline)?;
    Ok(Evaluation {
        split: name.into(),
        metric: metric_for(ds.task()).name().into(),
        score: set.score(&ckpt.config, &params)?,
        examples: set.len(),
        config_digest: pipeline.config_digest.clone(),
    })
}

#[cfg(test)]
mod tests;
