//! Declarative experiment configuration: JSON in, a runnable [`Pipeline`] out.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    read_classification_tsv, read_qa_jsonl, read_tagged_jsonl, Dataset, Examples, Split, TaskKind,
};
use crate::error::{Error, Result};
use crate::masking::MaskingPolicy;
use crate::mixer::DEFAULT_MIXING_LIMIT;
use crate::model::{ModelConfig, OptimizerConfig};
use crate::tokenizer::{train_vocabulary_from_words, Vocabulary};
use crate::trainer::{num_labels, Pipeline, Schedule, StageKind, StageSpec, StageTask, StoppingRule};
use crate::translit::{builtin, transliterate_classification_example, transliterate_qa_example, LookupTable, WordTransducer};

/// Seeds used when neither the config nor a flag names any.
pub const DEFAULT_SEEDS: [u64; 5] = [22, 32, 42, 52, 62];

/// Model shape; the vocabulary size and label count are filled in from data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_len: usize,
    /// Base seed for parameter initialisation, combined with each run seed.
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            layers: m.layers,
            heads: m.heads,
            d_model: m.d_model,
            d_ff: m.d_ff,
            max_len: m.max_len,
            seed: m.seed,
        }
    }
}

/// Load a vocabulary file, or train one of `size` tokens on the training
/// sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabularySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
}

/// A built-in transducer name, or a two-column lookup table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TransducerSpec {
    Builtin(String),
    Table { table: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub task: TaskKind,
    pub split: Split,
    /// Tagged JSONL for MLM, QA JSONL for QA, TSV otherwise.
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transliterate: Option<TransducerSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    /// Dataset ids: one set, or an English and an X-language set.
    pub train: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<String>,
}

fn default_epochs() -> usize {
    4
}

fn default_batch_size() -> usize {
    8
}

fn default_stopping() -> StoppingRule {
    StoppingRule::DevMetricBest
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub name: String,
    pub kind: StageKind,
    pub tasks: Vec<TaskConfig>,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_stopping")]
    pub stopping: StoppingRule,
    /// Overrides the experiment-wide masking policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masking: Option<MaskingPolicy>,
    /// Overrides the experiment-wide mixing limit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixing_limit: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureSection {
    /// Example-count cap K of examples-proportional mixing.
    pub limit: usize,
}

impl Default for MixtureSection {
    fn default() -> Self {
        Self {
            limit: DEFAULT_MIXING_LIMIT,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("output")
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub vocabulary: VocabularySpec,
    pub datasets: BTreeMap<String, DatasetSpec>,
    pub stages: Vec<StageConfig>,
    #[serde(default)]
    pub masking: MaskingPolicy,
    #[serde(default)]
    pub mixture: MixtureSection,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn config_err(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

/// A parsed config and the directory its relative paths are resolved from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, base_dir)
    }

    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            // keep the diagnostic on one line
            let message = e.inner().to_string().replace('\n', " ");
            config_err(field, message)
        })?;
        let loaded = Self {
            config,
            base_dir: base_dir.into(),
        };
        loaded.validate()?;
        Ok(loaded)
    }

    /// Resolves a config path against the config file's directory.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    fn validate(&self) -> Result<()> {
        let c = &self.config;
        match (&c.vocabulary.path, c.vocabulary.size) {
            (Some(p), None) => self.check_file("vocabulary.path", p)?,
            (None, Some(n)) if n > 0 => {}
            _ => return Err(config_err("vocabulary", "give exactly one of `path` or a positive `size`")),
        }
        for (id, ds) in &c.datasets {
            self.check_file(&format!("datasets.{id}.path"), &ds.path)?;
            match &ds.transliterate {
                Some(_) if ds.task == TaskKind::Mlm => {
                    return Err(config_err(format!("datasets.{id}.transliterate"), "tagged corpora are not transliterated"));
                }
                Some(TransducerSpec::Builtin(name)) if builtin(name).is_none() => {
                    return Err(config_err(
                        format!("datasets.{id}.transliterate"),
                        format!("unknown transducer {name:?}; expected identity, uppercase or vowel-doubling"),
                    ));
                }
                Some(TransducerSpec::Table { table }) => {
                    self.check_file(&format!("datasets.{id}.transliterate.table"), table)?
                }
                _ => {}
            }
        }
        if c.stages.is_empty() {
            return Err(config_err("stages", "at least one stage is required"));
        }
        for (i, stage) in c.stages.iter().enumerate() {
            for (j, task) in stage.tasks.iter().enumerate() {
                let refs = task
                    .train
                    .iter()
                    .map(|id| ("train", id))
                    .chain(task.dev.iter().map(|id| ("dev", id)))
                    .chain(task.test.iter().map(|id| ("test", id)));
                for (role, id) in refs {
                    if !c.datasets.contains_key(id) {
                        return Err(config_err(
                            format!("stages[{i}].tasks[{j}].{role}"),
                            format!("unknown dataset id {id:?}"),
                        ));
                    }
                }
            }
        }
        if c.seeds.is_empty() {
            return Err(config_err("seeds", "at least one seed is required"));
        }
        if c.workers == 0 {
            return Err(config_err("workers", "must be at least 1"));
        }
        Ok(())
    }

    fn check_file(&self, field: &str, path: &Path) -> Result<()> {
        let full = self.resolve(path);
        if !full.is_file() {
            return Err(Error::io(
                full,
                std::io::Error::new(std::io::ErrorKind::NotFound, format!("referenced by `{field}`")),
            ));
        }
        Ok(())
    }

    /// SHA-256 over the canonical config and the bytes of every referenced
    /// file. Output location, worker count and the seed list are left out, so
    /// a checkpoint matches its config whichever seeds were run.
    pub fn digest(&self) -> Result<String> {
        #[derive(Serialize)]
        struct DigestInput<'a> {
            config: &'a ExperimentConfig,
            files: BTreeMap<String, String>,
        }
        let mut config = self.config.clone();
        config.output_dir = PathBuf::new();
        config.workers = 1;
        config.seeds.clear();
        let mut files = BTreeMap::new();
        let mut add = |key: String, path: &Path| -> Result<()> {
            let full = self.resolve(path);
            let bytes = fs::read(&full).map_err(|e| Error::io(&full, e))?;
            files.insert(key, hex::encode(Sha256::digest(&bytes)));
            Ok(())
        };
        if let Some(p) = &self.config.vocabulary.path {
            add("vocabulary".into(), p)?;
        }
        for (id, ds) in &self.config.datasets {
            add(format!("datasets.{id}"), &ds.path)?;
            if let Some(TransducerSpec::Table { table }) = &ds.transliterate {
                add(format!("datasets.{id}.table"), table)?;
            }
        }
        let json = serde_json::to_vec(&DigestInput { config: &config, files })?;
        Ok(hex::encode(Sha256::digest(&json)))
    }

    fn transducer(&self, spec: &TransducerSpec) -> Result<Box<dyn WordTransducer>> {
        match spec {
            TransducerSpec::Builtin(name) => builtin(name).ok_or_else(|| config_err("transliterate", format!("unknown transducer {name:?}"))),
            TransducerSpec::Table { table } => Ok(Box::new(LookupTable::load_tsv(self.resolve(table))?)),
        }
    }

    /// Reads one dataset, applying its transliteration. QA examples whose
    /// answer span fails verification are dropped.
    pub fn load_dataset(&self, id: &str) -> Result<Dataset> {
        let spec = self
            .config
            .datasets
            .get(id)
            .ok_or_else(|| config_err("datasets", format!("unknown dataset id {id:?}")))?;
        let path = self.resolve(&spec.path);
        let t = spec.transliterate.as_ref().map(|s| self.transducer(s)).transpose()?;
        let examples = match spec.task {
            TaskKind::Mlm => Examples::Tagged(read_tagged_jsonl(&path)?),
            TaskKind::Qa => {
                let items = read_qa_jsonl(&path)?;
                Examples::Qa(match &t {
                    None => items,
                    Some(t) => {
                        let mut out = Vec::with_capacity(items.len());
                        for ex in &items {
                            if let Some(e) = transliterate_qa_example(ex, t.as_ref())?.into_example(ex) {
                                out.push(e);
                            }
                        }
                        out
                    }
                })
            }
            TaskKind::Nli | TaskKind::Sa => {
                let items = read_classification_tsv(&path, id)?;
                Examples::Classification(match &t {
                    None => items,
                    Some(t) => items
                        .iter()
                        .map(|ex| transliterate_classification_example(ex, t.as_ref()))
                        .collect::<Result<_>>()?,
                })
            }
        };
        Dataset::new(id, spec.task, spec.split, examples).map_err(|e| match e {
            Error::InvalidExample(m) => config_err(format!("datasets.{id}"), m),
            other => other,
        })
    }

    /// Loads or trains the vocabulary. Training uses every word of the
    /// datasets that some stage trains on.
    pub fn vocabulary(&self, datasets: &BTreeMap<String, Dataset>) -> Result<Vocabulary> {
        if let Some(p) = &self.config.vocabulary.path {
            return Vocabulary::load(self.resolve(p));
        }
        let size = self.config.vocabulary.size.expect("validated");
        let train_ids: std::collections::BTreeSet<&str> = self
            .config
            .stages
            .iter()
            .flat_map(|s| &s.tasks)
            .flat_map(|t| &t.train)
            .map(String::as_str)
            .collect();
        let mut words: Vec<&str> = Vec::new();
        for id in train_ids {
            match datasets[id].examples() {
                Examples::Tagged(s) => words.extend(s.iter().flat_map(|s| s.surfaces())),
                Examples::Classification(c) => words.extend(
                    c.iter()
                        .flat_map(|e| e.text_a.split_whitespace().chain(e.text_b.iter().flat_map(|b| b.split_whitespace()))),
                ),
                Examples::Qa(q) => words.extend(
                    q.iter()
                        .flat_map(|e| e.context.split_whitespace().chain(e.question.split_whitespace())),
                ),
            }
        }
        train_vocabulary_from_words(words, size)
    }

    /// Reads every dataset, builds the vocabulary and assembles the pipeline.
    pub fn pipeline(&self) -> Result<Pipeline> {
        let c = &self.config;
        let mut datasets = BTreeMap::new();
        for id in c.datasets.keys() {
            datasets.insert(id.clone(), self.load_dataset(id)?);
        }
        let vocab = self.vocabulary(&datasets)?;
        let label_count = c
            .stages
            .iter()
            .flat_map(|s| &s.tasks)
            .map(|t| num_labels(c.datasets[&t.train[0]].task))
            .max()
            .unwrap_or(0)
            .max(2);
        let model = ModelConfig {
            layers: c.model.layers,
            heads: c.model.heads,
            d_model: c.model.d_model,
            d_ff: c.model.d_ff,
            vocab_size: vocab.len(),
            max_len: c.model.max_len,
            num_labels: label_count,
            seed: c.model.seed,
        };
        let stages = c
            .stages
            .iter()
            .map(|s| {
                let tasks = s
                    .tasks
                    .iter()
                    .map(|t| StageTask {
                        train: t.train.iter().map(|id| datasets[id].clone()).collect(),
                        dev: t.dev.as_ref().map(|id| datasets[id].clone()),
                        test: t.test.as_ref().map(|id| datasets[id].clone()),
                    })
                    .collect();
                StageSpec {
                    schedule: s.schedule,
                    epochs: s.epochs,
                    batch_size: s.batch_size,
                    stopping: s.stopping,
                    masking: s.masking.unwrap_or(c.masking),
                    mixing_limit: s.mixing_limit.unwrap_or(c.mixture.limit),
                    ..StageSpec::new(s.name.clone(), s.kind, tasks)
                }
            })
            .collect();
        let pipeline = Pipeline {
            model,
            optimizer: c.optimizer.clone(),
            vocab,
            stages,
            config_digest: self.digest()?,
        };
        pipeline.validate().map_err(|e| match e {
            Error::Pipeline(m) => config_err("stages", m),
            Error::InvalidArgument(m) => config_err("model", m),
            other => other,
        })?;
        Ok(pipeline)
    }
}
