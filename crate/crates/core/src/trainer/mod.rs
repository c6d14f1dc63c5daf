//! Staged training: optional MLM pre-training and intermediate tasks, then
//! fine-tuning on the target task, repeated over seeds.

mod features;
mod stopping;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use features::{
    classification_examples, head_for, metric_for, mlm_examples, num_labels, qa_examples, EvalSet, MAX_ANSWER_TOKENS,
};
pub use stopping::{select_best, should_stop, BestTracker, Metric, Snapshot, StoppingRule};

use crate::corpus::{Dataset, Examples, Split, TaggedSentence, TaskKind};
use crate::error::{Error, Result};
use crate::masking::MaskingPolicy;
use crate::mixer::{derive_seed, mixing_rates, BatchPlan, MixtureSpec, Source, DEFAULT_MIXING_LIMIT};
use crate::model::{backward, optimizer_step, Head, ModelConfig, OptimizerConfig, OptimizerState, Parameters, TrainingExample};
use crate::tokenizer::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageKind {
    MlmPretrain,
    SingleTask,
    MultiTask,
    FineTune,
}

/// How the training sets of a single-task stage are combined into batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// All training sets pooled and shuffled.
    #[default]
    Shuffled,
    /// Two sets, each batch split evenly between them.
    Interspersed,
    /// Two sets, all of the first before any of the second.
    Sequential,
}

/// One task trained within a stage.
#[derive(Debug, Clone)]
pub struct StageTask {
    /// One set, or an English set and an X-language set.
    pub train: Vec<Dataset>,
    pub dev: Option<Dataset>,
    pub test: Option<Dataset>,
}

impl StageTask {
    pub fn kind(&self) -> TaskKind {
        self.train[0].task()
    }
}

#[derive(Debug, Clone)]
pub struct StageSpec {
    pub name: String,
    pub kind: StageKind,
    pub tasks: Vec<StageTask>,
    pub schedule: Schedule,
    /// Upper bound on passes over the data.
    pub epochs: usize,
    pub batch_size: usize,
    pub stopping: StoppingRule,
    /// Used by MLM tasks.
    pub masking: MaskingPolicy,
    /// Example-count cap for multi-task mixing rates.
    pub mixing_limit: usize,
}

impl StageSpec {
    pub fn new(name: impl Into<String>, kind: StageKind, tasks: Vec<StageTask>) -> Self {
        Self {
            name: name.into(),
            kind,
            tasks,
            schedule: Schedule::Shuffled,
            epochs: 4,
            batch_size: 8,
            stopping: StoppingRule::DevMetricBest,
            masking: MaskingPolicy::standard(),
            mixing_limit: DEFAULT_MIXING_LIMIT,
        }
    }
}

/// Everything needed to run an experiment for any seed.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub vocab: Vocabulary,
    pub stages: Vec<StageSpec>,
    pub config_digest: String,
}

fn pipeline_err(msg: impl Into<String>) -> Error {
    Error::Pipeline(msg.into())
}

impl Pipeline {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.model.vocab_size != self.vocab.len() {
            return Err(pipeline_err(format!(
                "model vocab_size {} differs from the vocabulary's {} tokens",
                self.model.vocab_size,
                self.vocab.len()
            )));
        }
        OptimizerConfig {
            total_steps: self.optimizer.warmup_steps.max(1),
            ..self.optimizer.clone()
        }
        .validate()?;
        let fine_tunes = self.stages.iter().filter(|s| s.kind == StageKind::FineTune).count();
        if fine_tunes != 1 || self.stages.last().map(|s| s.kind) != Some(StageKind::FineTune) {
            return Err(pipeline_err("a pipeline needs exactly one fine-tune stage, and it must come last"));
        }
        for stage in &self.stages {
            validate_stage(stage).map_err(|e| match e {
                Error::Pipeline(m) => pipeline_err(format!("stage {}: {m}", stage.name)),
                other => other,
            })?;
        }
        Ok(())
    }
}

fn validate_stage(stage: &StageSpec) -> Result<()> {
    if stage.epochs == 0 || stage.batch_size == 0 {
        return Err(pipeline_err("epochs and batch_size must be at least 1"));
    }
    stage.stopping.validate()?;
    stage.masking.validate()?;
    if stage.tasks.is_empty() {
        return Err(pipeline_err("no tasks"));
    }
    for t in &stage.tasks {
        if t.train.is_empty() || t.train.len() > 2 {
            return Err(pipeline_err("each task takes one or two training sets"));
        }
        let kind = t.kind();
        for ds in t.train.iter().chain(&t.dev).chain(&t.test) {
            if ds.task() != kind {
                return Err(Error::TaskMismatch {
                    expected: kind.to_string(),
                    found: ds.task().to_string(),
                });
            }
        }
        if t.train.iter().any(|d| d.split() != Split::Train || d.is_empty()) {
            return Err(pipeline_err("training sets must be non-empty train splits"));
        }
        if stage.stopping == StoppingRule::DevMetricBest && t.dev.as_ref().is_none_or(Dataset::is_empty) {
            return Err(pipeline_err(format!("best-dev selection needs a {kind} dev set")));
        }
    }
    let kinds: Vec<TaskKind> = stage.tasks.iter().map(StageTask::kind).collect();
    match stage.kind {
        StageKind::MultiTask => {
            let mut heads: Vec<Head> = kinds.iter().map(|&k| head_for(k)).collect();
            heads.sort();
            heads.dedup();
            if stage.tasks.len() < 2 || heads.len() != stage.tasks.len() {
                return Err(pipeline_err("multi-task stages need two or more tasks with distinct heads"));
            }
        }
        _ if stage.tasks.len() != 1 => return Err(pipeline_err("only multi-task stages take several tasks")),
        StageKind::MlmPretrain if kinds[0] != TaskKind::Mlm => {
            return Err(pipeline_err("MLM pre-training needs a tagged corpus"));
        }
        StageKind::SingleTask | StageKind::FineTune if kinds[0] == TaskKind::Mlm => {
            return Err(pipeline_err("use an mlm-pretrain stage for MLM"));
        }
        StageKind::FineTune if stage.tasks[0].test.as_ref().is_none_or(Dataset::is_empty) => {
            return Err(pipeline_err("the fine-tune stage needs a test set"));
        }
        _ => {}
    }
    if stage.kind != StageKind::MultiTask {
        let sets = stage.tasks[0].train.len();
        match stage.schedule {
            Schedule::Interspersed | Schedule::Sequential if sets != 2 => {
                return Err(pipeline_err(format!("{:?} batching needs two training sets", stage.schedule)));
            }
            Schedule::Interspersed if stage.batch_size < 2 => {
                return Err(pipeline_err("interspersed batches need batch_size >= 2"));
            }
            _ => {}
        }
    }
    Ok(())
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seed: u64,
    pub stage: String,
    pub step: u64,
    pub epoch: f64,
    pub loss: f64,
    pub train_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_metric: Option<f64>,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub name: String,
    pub kind: StageKind,
    pub optimizer_steps: u64,
    pub epochs: f64,
    pub stopped_early: bool,
    /// Micro-batches each head was trained on.
    pub head_updates: BTreeMap<Head, u64>,
    /// Best dev score per task, when tracked.
    pub best_dev: BTreeMap<TaskKind, f64>,
    /// Sentences the masking policy could not use.
    pub skipped_sentences: usize,
    /// QA examples whose answer did not survive truncation.
    pub dropped_examples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Target-task test score.
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev: Option<f64>,
    pub stages: Vec<StageSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub metric: Metric,
    pub per_seed: Vec<SeedResult>,
    pub mean: f64,
    pub max: f64,
    pub min: f64,
    /// Population standard deviation.
    pub std: f64,
    pub config_digest: String,
    /// Seeds trained concurrently; each seed itself is single-threaded.
    pub workers: usize,
}

impl RunReport {
    pub fn aggregate(metric: Metric, per_seed: Vec<SeedResult>, config_digest: String, workers: usize) -> Result<Self> {
        if per_seed.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        let scores: Vec<f64> = per_seed.iter().map(|r| r.score).collect();
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let std = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
        Ok(Self {
            metric,
            mean,
            max: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min: scores.iter().copied().fold(f64::INFINITY, f64::min),
            std,
            per_seed,
            config_digest,
            workers,
        })
    }
}

/// Result of one seed: its report entry, log lines and final parameters.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub result: SeedResult,
    pub logs: Vec<LogRecord>,
    pub params: Parameters,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: RunReport,
    pub runs: Vec<SeedRun>,
}

/// Featurised data for one task of one stage.
struct Prepared {
    kind: TaskKind,
    head: Head,
    /// Per training set: fixed examples, or the raw corpus for MLM.
    train: Vec<TrainData>,
    dropped: usize,
    dev: Option<EvalSet>,
    test: Option<EvalSet>,
}

enum TrainData {
    Fixed(Vec<TrainingExample>),
    Corpus(Vec<TaggedSentence>),
}

fn prepare(p: &Pipeline) -> Result<Vec<Vec<Prepared>>> {
    let max_len = p.model.max_len;
    let eval_seed = derive_seed(p.model.seed, 0xE7A1);
    p.stages
        .iter()
        .map(|stage| {
            stage
                .tasks
                .iter()
                .map(|t| {
                    let kind = t.kind();
                    let mut dropped = 0;
                    let train = t
                        .train
                        .iter()
                        .map(|ds| {
                            Ok(match ds.examples() {
                                Examples::Tagged(s) => TrainData::Corpus(s.clone()),
                                Examples::Classification(c) => TrainData::Fixed(classification_examples(kind, c, &p.vocab, max_len)?),
                                Examples::Qa(q) => {
                                    let (ex, d) = qa_examples(q, &p.vocab, max_len)?;
                                    dropped += d;
                                    TrainData::Fixed(ex)
                                }
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let eval = |ds: &Option<Dataset>| -> Result<Option<EvalSet>> {
                        ds.as_ref()
                            .map(|ds| match ds.examples() {
                                Examples::Tagged(s) => EvalSet::mlm(s, &p.vocab, max_len, &stage.masking, eval_seed),
                                Examples::Classification(c) => EvalSet::classification(kind, c, &p.vocab, max_len),
                                Examples::Qa(q) => EvalSet::qa(q, &p.vocab, max_len),
                            })
                            .transpose()
                    };
                    Ok(Prepared {
                        kind,
                        head: head_for(kind),
                        train,
                        dropped,
                        dev: eval(&t.dev)?,
                        test: eval(&t.test)?,
                    })
                })
                .collect()
        })
        .collect()
}

/// Runs every seed and aggregates the target-task test scores.
///
/// With `workers > 1`, seeds are spread over that many threads; results do
/// not depend on the worker count.
pub fn run_pipeline(pipeline: &Pipeline, seeds: &[u64], workers: usize) -> Result<PipelineRun> {
    pipeline.validate()?;
    if seeds.is_empty() {
        return Err(pipeline_err("no seeds"));
    }
    let prepared = prepare(pipeline)?;
    let workers = workers.clamp(1, seeds.len());
    let mut slots: Vec<Option<Result<SeedRun>>> = (0..seeds.len()).map(|_| None).collect();
    if workers == 1 {
        for (slot, &seed) in slots.iter_mut().zip(seeds) {
            *slot = Some(run_seed(pipeline, &prepared, seed));
        }
    } else {
        let prepared = &prepared;
        let results: Vec<(usize, Result<SeedRun>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    scope.spawn(move || {
                        (w..seeds.len())
                            .step_by(workers)
                            .map(|i| (i, run_seed(pipeline, prepared, seeds[i])))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("seed worker panicked"))
                .collect()
        });
        for (i, r) in results {
            slots[i] = Some(r);
        }
    }
    let runs: Vec<SeedRun> = slots
        .into_iter()
        .map(|s| s.expect("every seed ran"))
        .collect::<Result<_>>()?;
    let last = pipeline.stages.last().expect("validated");
    let metric = metric_for(last.tasks[0].kind());
    let report = RunReport::aggregate(
        metric,
        runs.iter().map(|r| r.result.clone()).collect(),
        pipeline.config_digest.clone(),
        workers,
    )?;
    Ok(PipelineRun { report, runs })
}

/// The first-epoch batch plan of every stage, as `seed` would train it.
pub fn stage_plans(pipeline: &Pipeline, seed: u64) -> Result<Vec<BatchPlan>> {
    pipeline.validate()?;
    let prepared = prepare(pipeline)?;
    pipeline
        .stages
        .iter()
        .zip(&prepared)
        .enumerate()
        .map(|(i, (stage, tasks))| {
            let stage_seed = derive_seed(seed, i as u64);
            Ok(epoch_data(pipeline, stage, tasks, derive_seed(stage_seed, 0))?.plan)
        })
        .collect()
}

struct SeedState<'a> {
    pipeline: &'a Pipeline,
    seed: u64,
    params: Parameters,
    /// Task kind each head was last trained for.
    head_task: BTreeMap<Head, TaskKind>,
    logs: Vec<LogRecord>,
}

fn run_seed(pipeline: &Pipeline, prepared: &[Vec<Prepared>], seed: u64) -> Result<SeedRun> {
    let mut st = SeedState {
        pipeline,
        seed,
        params: Parameters::init(&pipeline.model, derive_seed(pipeline.model.seed, seed)),
        head_task: BTreeMap::new(),
        logs: Vec::new(),
    };
    let mut summaries = Vec::new();
    let mut carried: Vec<(TaskKind, Parameters)> = Vec::new();
    for (si, (stage, tasks)) in pipeline.stages.iter().zip(prepared).enumerate() {
        if let Some(i) = carried.iter().position(|(k, _)| *k == tasks[0].kind) {
            st.params = carried.swap_remove(i).1;
        } else if let Some((_, p)) = carried.into_iter().next() {
            st.params = p;
        }
        let (summary, bests) = run_stage(&mut st, si as u64, stage, tasks)?;
        carried = bests;
        summaries.push(summary);
    }
    if let Some((_, p)) = carried.into_iter().next() {
        st.params = p;
    }

    let target = prepared.last().and_then(|t| t.first()).expect("validated");
    let config = &pipeline.model;
    let score = target.test.as_ref().expect("validated").score(config, &st.params)?;
    let dev = target.dev.as_ref().map(|d| d.score(config, &st.params)).transpose()?;
    Ok(SeedRun {
        result: SeedResult {
            seed,
            score,
            dev,
            stages: summaries,
        },
        logs: st.logs,
        params: st.params,
    })
}

/// Examples of each plan source for one epoch, and the task each source
/// belongs to.
struct EpochData {
    sources: Vec<Vec<TrainingExample>>,
    source_task: Vec<usize>,
    plan: BatchPlan,
    skipped: usize,
}

fn epoch_data(pipeline: &Pipeline, stage: &StageSpec, tasks: &[Prepared], seed: u64) -> Result<EpochData> {
    let config = &pipeline.model;
    let mut skipped = 0;
    let mut per_task: Vec<Vec<Vec<TrainingExample>>> = Vec::with_capacity(tasks.len());
    for (ti, t) in tasks.iter().enumerate() {
        let mut sets = Vec::with_capacity(t.train.len());
        for (di, data) in t.train.iter().enumerate() {
            sets.push(match data {
                TrainData::Fixed(ex) => ex.clone(),
                TrainData::Corpus(corpus) => {
                    let mask_seed = derive_seed(seed, (ti * 16 + di) as u64);
                    let (ex, s) = mlm_examples(corpus, &pipeline.vocab, config.max_len, &stage.masking, mask_seed)?;
                    skipped += s;
                    ex
                }
            });
        }
        if sets.iter().any(Vec::is_empty) {
            return Err(pipeline_err(format!(
                "stage {}: a {} training set has no usable examples",
                stage.name, t.kind
            )));
        }
        per_task.push(sets);
    }

    let plan_seed = derive_seed(seed, 0x91A4);
    if stage.kind == StageKind::MultiTask {
        let sources: Vec<Vec<TrainingExample>> = per_task.into_iter().map(|sets| sets.concat()).collect();
        let spec = MixtureSpec::from_sizes(
            sources.iter().enumerate().map(|(i, s)| (format!("task{i}"), s.len())),
            stage.mixing_limit,
        )?;
        let total: usize = sources.iter().map(Vec::len).sum();
        let n_batches = total.div_ceil(stage.batch_size);
        let plan = BatchPlan::multitask(
            sources.iter().enumerate().map(|(i, s)| Source::new(tasks[i].kind.to_string(), s.len())).collect(),
            &mixing_rates(&spec),
            &vec![stage.batch_size; sources.len()],
            n_batches,
            plan_seed,
        )?;
        return Ok(EpochData {
            source_task: (0..sources.len()).collect(),
            sources,
            plan,
            skipped,
        });
    }

    let mut sets = per_task.pop().expect("one task");
    let ids: Vec<String> = stage.tasks[0].train.iter().map(|d| d.id().to_string()).collect();
    let (plan, sources) = match stage.schedule {
        Schedule::Shuffled => {
            let pooled = sets.concat();
            let plan = BatchPlan::monolingual(Source::new(ids.join("+"), pooled.len()), stage.batch_size, plan_seed)?;
            (plan, vec![pooled])
        }
        Schedule::Interspersed | Schedule::Sequential => {
            let x = sets.pop().expect("two sets");
            let en = sets.pop().expect("two sets");
            let a = Source::new(ids[0].clone(), en.len());
            let b = Source::new(ids[1].clone(), x.len());
            let plan = if stage.schedule == Schedule::Interspersed {
                BatchPlan::interspersed(a, b, stage.batch_size, plan_seed)?
            } else {
                BatchPlan::sequential(a, b, stage.batch_size, plan_seed)?
            };
            (plan, vec![en, x])
        }
    };
    Ok(EpochData {
        source_task: vec![0; sources.len()],
        sources,
        plan,
        skipped,
    })
}

fn run_stage(st: &mut SeedState, index: u64, stage: &StageSpec, tasks: &[Prepared]) -> Result<(StageSummary, Vec<(TaskKind, Parameters)>)> {
    let pipeline = st.pipeline;
    let config = &pipeline.model;
    let stage_seed = derive_seed(st.seed, index);
    for t in tasks {
        if st.head_task.get(&t.head) != Some(&t.kind) {
            st.params.reset_head(t.head, num_labels(t.kind), derive_seed(stage_seed, t.head as u64));
            st.head_task.insert(t.head, t.kind);
        }
    }

    let accum = pipeline.optimizer.grad_accum_steps.max(1);
    let first = epoch_data(pipeline, stage, tasks, derive_seed(stage_seed, 0))?;
    let planned_steps = (stage.epochs * first.plan.batches.len().div_ceil(accum)) as u64;
    let opt = OptimizerConfig {
        // one past the last planned update, so that update still has a
        // positive learning rate
        total_steps: planned_steps + 1,
        warmup_steps: pipeline.optimizer.warmup_steps.min(planned_steps),
        ..pipeline.optimizer.clone()
    };
    let mut state = OptimizerState::new(&st.params);
    let mut trackers: Vec<BestTracker<Parameters>> = tasks.iter().map(|_| BestTracker::new()).collect();

    let mut summary = StageSummary {
        name: stage.name.clone(),
        kind: stage.kind,
        optimizer_steps: 0,
        epochs: 0.0,
        stopped_early: false,
        head_updates: tasks.iter().map(|t| (t.head, 0)).collect(),
        best_dev: BTreeMap::new(),
        skipped_sentences: first.skipped,
        dropped_examples: tasks.iter().map(|t| t.dropped).sum(),
    };
    let mut step = 0u64;
    let mut micro = 0u64;
    let mut pending: Option<Parameters> = None;
    let mut pending_count = 0usize;
    let mut pending_heads: Vec<Head> = Vec::new();
    let mut last_lr = 0.0;
    let mut data = Some(first);

    'epochs: for epoch in 0..stage.epochs {
        let epoch_data = match data.take() {
            Some(d) => d,
            None => epoch_data(pipeline, stage, tasks, derive_seed(stage_seed, epoch as u64))?,
        };
        let n = epoch_data.plan.batches.len();
        let interval = n.div_ceil(10).max(1);
        let (mut win_loss, mut win_batches, mut win_correct, mut win_total) = (0.0, 0usize, 0usize, 0usize);

        for (b, planned) in epoch_data.plan.batches.iter().enumerate() {
            let source = planned.slots[0].source;
            let task = &tasks[epoch_data.source_task[source]];
            let batch: Vec<TrainingExample> = planned
                .slots
                .iter()
                .map(|s| epoch_data.sources[s.source][s.example].clone())
                .collect();
            let r = backward(config, &st.params, &batch, task.head)?;
            micro += 1;
            win_loss += r.loss;
            win_batches += 1;
            win_correct += r.correct;
            win_total += r.total;
            match pending.as_mut() {
                Some(g) => g.add_assign(&r.gradients),
                None => pending = Some(r.gradients),
            }
            pending_count += 1;
            pending_heads.push(task.head);

            let last_in_epoch = b + 1 == n;
            let flush = |pending: &mut Option<Parameters>, count: &mut usize, heads: &mut Vec<Head>, step: &mut u64, params: &mut Parameters, summary: &mut StageSummary, state: &mut OptimizerState| -> Result<f64> {
                let mut g = pending.take().expect("pending gradients");
                g.scale(1.0 / *count as f64);
                *step += 1;
                let stats = optimizer_step(state, params, &mut g, &opt, *step)?;
                for h in heads.drain(..) {
                    *summary.head_updates.entry(h).or_default() += 1;
                }
                *count = 0;
                Ok(stats.learning_rate)
            };
            if pending_count == accum || last_in_epoch {
                last_lr = flush(&mut pending, &mut pending_count, &mut pending_heads, &mut step, &mut st.params, &mut summary, &mut state)?;
            }

            if (b + 1) % interval == 0 || last_in_epoch {
                let progress = epoch as f64 + (b + 1) as f64 / n as f64;
                let track = stage.stopping == StoppingRule::DevMetricBest;
                let mut dev_metric = None;
                if track || last_in_epoch {
                    for (ti, t) in tasks.iter().enumerate() {
                        let Some(dev) = &t.dev else { continue };
                        let score = dev.score(config, &st.params)?;
                        if ti == 0 {
                            dev_metric = Some(score);
                        }
                        if track {
                            trackers[ti].offer(score, micro, || st.params.clone());
                        }
                    }
                }
                let snapshot = Snapshot {
                    train_acc: Some(win_correct as f64 / win_total.max(1) as f64),
                    train_loss: Some(win_loss / win_batches as f64),
                    dev_metric,
                    epoch: Some(progress),
                };
                st.logs.push(LogRecord {
                    seed: st.seed,
                    stage: stage.name.clone(),
                    step,
                    epoch: progress,
                    loss: snapshot.train_loss.expect("set"),
                    train_accuracy: snapshot.train_acc.expect("set"),
                    dev_metric,
                    learning_rate: last_lr,
                });
                (win_loss, win_batches, win_correct, win_total) = (0.0, 0, 0, 0);
                summary.epochs = progress;
                if should_stop(&stage.stopping, &snapshot)? {
                    if pending.is_some() {
                        flush(&mut pending, &mut pending_count, &mut pending_heads, &mut step, &mut st.params, &mut summary, &mut state)?;
                    }
                    summary.stopped_early = !(last_in_epoch && epoch + 1 == stage.epochs);
                    break 'epochs;
                }
            }
        }
    }
    summary.optimizer_steps = step;

    let mut bests = Vec::new();
    if stage.stopping == StoppingRule::DevMetricBest {
        for (t, tracker) in tasks.iter().zip(trackers) {
            if let Some(score) = tracker.score() {
                summary.best_dev.insert(t.kind, score);
            }
            if let Some(p) = tracker.into_inner() {
                bests.push((t.kind, p));
            }
        }
    }
    Ok((summary, bests))
}
