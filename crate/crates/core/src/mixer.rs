//! Batch schedules.
//!
//! * multi-task: every batch is drawn from a single task, picked i.i.d. with
//!   examples-proportional mixing rates `min(e_m, K) / Σ_n min(e_n, K)`;
//! * bilingual: every batch holds `⌈B/2⌉` English and `⌊B/2⌋` X-language
//!   examples drawn from two independently shuffled streams;
//! * sequential: all batches of one dataset, then all batches of the other.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};

/// Default artificial dataset-size cap `K`.
pub const DEFAULT_MIXING_LIMIT: usize = 1 << 17;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSize {
    pub task_id: String,
    pub examples: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub tasks: Vec<TaskSize>,
    pub limit: usize,
}

impl MixtureSpec {
    pub fn new(tasks: Vec<TaskSize>, limit: usize) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::InvalidArgument("a mixture needs at least one task".into()));
        }
        if limit == 0 {
            return Err(Error::InvalidArgument("mixing limit must be at least 1".into()));
        }
        if let Some(t) = tasks.iter().find(|t| t.examples == 0) {
            return Err(Error::InvalidArgument(format!("task {} has no examples", t.task_id)));
        }
        Ok(Self { tasks, limit })
    }

    /// Convenience constructor from `(id, size)` pairs.
    pub fn from_sizes<S: Into<String>>(sizes: impl IntoIterator<Item = (S, usize)>, limit: usize) -> Result<Self> {
        Self::new(
            sizes
                .into_iter()
                .map(|(id, examples)| TaskSize {
                    task_id: id.into(),
                    examples,
                })
                .collect(),
            limit,
        )
    }
}

/// Examples-proportional mixing rates with the size cap.
pub fn mixing_rates(spec: &MixtureSpec) -> Vec<f64> {
    let capped: Vec<f64> = spec
        .tasks
        .iter()
        .map(|t| t.examples.min(spec.limit) as f64)
        .collect();
    let total: f64 = capped.iter().sum();
    capped.into_iter().map(|c| c / total).collect()
}

/// Temperature-scaled variant: capped sizes are raised to `1 / temperature`
/// before normalising. `temperature = 1` gives [`mixing_rates`].
pub fn temperature_mixing_rates(spec: &MixtureSpec, temperature: f64) -> Result<Vec<f64>> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature {temperature} must be positive")));
    }
    if temperature == 1.0 {
        return Ok(mixing_rates(spec));
    }
    let scaled: Vec<f64> = spec
        .tasks
        .iter()
        .map(|t| (t.examples.min(spec.limit) as f64).powf(1.0 / temperature))
        .collect();
    let total: f64 = scaled.iter().sum();
    Ok(scaled.into_iter().map(|c| c / total).collect())
}

/// Draws `n` indices i.i.d. from `rates`.
pub fn sample_from_rates(rates: &[f64], n: usize, seed: u64) -> Vec<usize> {
    let mut rng = stream_rng(seed, ASSIGNMENT_STREAM);
    let last = rates.iter().rposition(|&r| r > 0.0).unwrap_or(0);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, &r) in rates.iter().enumerate() {
                acc += r;
                if u < acc {
                    return i;
                }
            }
            last
        })
        .collect()
}

/// Picks a task (as an index into `spec.tasks`) for each of `n_batches`
/// batches, i.i.d. with the mixing rates.
pub fn sample_batch_assignments(spec: &MixtureSpec, n_batches: usize, seed: u64) -> Vec<usize> {
    sample_from_rates(&mixing_rates(spec), n_batches, seed)
}

const ASSIGNMENT_STREAM: u64 = u64::MAX;

/// Independent random stream `stream` derived from `seed`.
/// Decorrelated child seed for `tag` (SplitMix64 finaliser).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Endless shuffled pass over `0..len`, reshuffled every time it wraps.
struct CyclingStream {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl CyclingStream {
    fn new(len: usize, rng: ChaCha8Rng) -> Self {
        let mut s = Self {
            order: (0..len).collect(),
            pos: 0,
            rng,
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRef {
    /// Index into [`BatchPlan::sources`].
    pub source: usize,
    /// Example index inside that source.
    pub example: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedBatch {
    pub slots: Vec<SlotRef>,
}

impl PlannedBatch {
    pub fn count(&self, source: usize) -> usize {
        self.slots.iter().filter(|s| s.source == source).count()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// A source of examples to schedule: its id and example count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Source {
    pub id: String,
    pub len: usize,
}

impl Source {
    pub fn new(id: impl Into<String>, len: usize) -> Self {
        Self { id: id.into(), len }
    }

    fn of(ds: &Dataset) -> Self {
        Self::new(ds.id(), ds.len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub seed: u64,
    pub sources: Vec<String>,
    pub batches: Vec<PlannedBatch>,
}

impl BatchPlan {
    /// One shuffled pass over a single source, in batches of `batch_size`
    /// (the last one may be short).
    pub fn monolingual(source: Source, batch_size: usize, seed: u64) -> Result<Self> {
        check_batch_size(batch_size, 1)?;
        Ok(Self {
            batch_size,
            seed,
            batches: shuffled_batches(0, source.len, batch_size, stream_rng(seed, 0)),
            sources: vec![source.id],
        })
    }

    /// All batches of `first`, then all batches of `second`.
    pub fn sequential(first: Source, second: Source, batch_size: usize, seed: u64) -> Result<Self> {
        check_batch_size(batch_size, 1)?;
        let mut batches = shuffled_batches(0, first.len, batch_size, stream_rng(seed, 0));
        batches.extend(shuffled_batches(1, second.len, batch_size, stream_rng(seed, 1)));
        Ok(Self {
            batch_size,
            seed,
            sources: vec![first.id, second.id],
            batches,
        })
    }

    /// Bilingual batches with `⌈B/2⌉` slots for `en` and `⌊B/2⌋` for `x`.
    ///
    /// The source that needs more batches is covered exactly once; the other
    /// one cycles, reshuffling on every wrap. The final batch shrinks when
    /// the covering source runs out, keeping `count(en) - count(x)` in
    /// `{0, 1}`.
    pub fn interspersed(en: Source, x: Source, batch_size: usize, seed: u64) -> Result<Self> {
        check_batch_size(batch_size, 2)?;
        if en.len == 0 || x.len == 0 {
            return Err(Error::InvalidArgument("interspersed batches need two non-empty sources".into()));
        }
        let per_en = batch_size.div_ceil(2);
        let per_x = batch_size / 2;
        let en_batches = en.len.div_ceil(per_en);
        let x_batches = x.len.div_ceil(per_x);
        let n = en_batches.max(x_batches);
        let en_covers = en_batches >= x_batches;

        let mut en_stream = CyclingStream::new(en.len, stream_rng(seed, 0));
        let mut x_stream = CyclingStream::new(x.len, stream_rng(seed, 1));
        let mut batches = Vec::with_capacity(n);
        for b in 0..n {
            let (take_en, take_x) = if b + 1 < n {
                (per_en, per_x)
            } else if en_covers {
                let rest = en.len - (n - 1) * per_en;
                (rest, rest.min(per_x))
            } else {
                let rest = x.len - (n - 1) * per_x;
                ((rest + per_en - per_x).min(per_en), rest)
            };
            let mut slots = Vec::with_capacity(take_en + take_x);
            slots.extend((0..take_en).map(|_| SlotRef {
                source: 0,
                example: en_stream.next(),
            }));
            slots.extend((0..take_x).map(|_| SlotRef {
                source: 1,
                example: x_stream.next(),
            }));
            batches.push(PlannedBatch { slots });
        }
        Ok(Self {
            batch_size,
            seed,
            sources: vec![en.id, x.id],
            batches,
        })
    }

    /// `n_batches` task-homogeneous batches; the task of each batch is drawn
    /// with `rates` and its examples come from that task's cycling stream.
    /// `batch_sizes[m]` is the batch size used for source `m`.
    pub fn multitask(
        sources: Vec<Source>,
        rates: &[f64],
        batch_sizes: &[usize],
        n_batches: usize,
        seed: u64,
    ) -> Result<Self> {
        if sources.is_empty() || sources.len() != rates.len() || sources.len() != batch_sizes.len() {
            return Err(Error::InvalidArgument(
                "multi-task plans need one rate and batch size per source".into(),
            ));
        }
        for (s, &b) in sources.iter().zip(batch_sizes) {
            check_batch_size(b, 1)?;
            if s.len == 0 {
                return Err(Error::InvalidArgument(format!("source {} is empty", s.id)));
            }
        }
        let mut streams: Vec<CyclingStream> = sources
            .iter()
            .enumerate()
            .map(|(i, s)| CyclingStream::new(s.len, stream_rng(seed, i as u64)))
            .collect();
        let batches = sample_from_rates(rates, n_batches, seed)
            .into_iter()
            .map(|m| PlannedBatch {
                slots: (0..batch_sizes[m])
                    .map(|_| SlotRef {
                        source: m,
                        example: streams[m].next(),
                    })
                    .collect(),
            })
            .collect();
        Ok(Self {
            batch_size: batch_sizes.iter().copied().max().unwrap_or(0),
            seed,
            sources: sources.into_iter().map(|s| s.id).collect(),
            batches,
        })
    }

    /// One JSON object per batch with its per-source composition and the
    /// `(source, example)` pairs it holds.
    pub fn batch_records(&self) -> Vec<serde_json::Value> {
        self.batches
            .iter()
            .enumerate()
            .map(|(i, batch)| {
                let mut composition: BTreeMap<&str, usize> = BTreeMap::new();
                for s in &batch.slots {
                    *composition.entry(&self.sources[s.source]).or_default() += 1;
                }
                let examples: Vec<(&str, usize)> = batch
                    .slots
                    .iter()
                    .map(|s| (self.sources[s.source].as_str(), s.example))
                    .collect();
                serde_json::json!({
                    "batch": i,
                    "composition": composition,
                    "examples": examples,
                })
            })
            .collect()
    }

    /// Writes [`BatchPlan::batch_records`] as JSONL, tagging each line with
    /// `config_digest` when given.
    pub fn write_jsonl(&self, path: impl AsRef<Path>, config_digest: Option<&str>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for mut rec in self.batch_records() {
            if let Some(d) = config_digest {
                rec["config_digest"] = d.into();
            }
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn check_batch_size(batch_size: usize, min: usize) -> Result<()> {
    if batch_size < min {
        return Err(Error::InvalidArgument(format!("batch size must be at least {min}")));
    }
    Ok(())
}

fn shuffled_batches(source: usize, len: usize, batch_size: usize, mut rng: ChaCha8Rng) -> Vec<PlannedBatch> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
        .chunks(batch_size)
        .map(|chunk| PlannedBatch {
            slots: chunk
                .iter()
                .map(|&example| SlotRef { source, example })
                .collect(),
        })
        .collect()
}

fn same_task(a: &Dataset, b: &Dataset) -> Result<()> {
    if a.task() != b.task() {
        return Err(Error::TaskMismatch {
            expected: a.task().to_string(),
            found: b.task().to_string(),
        });
    }
    Ok(())
}

/// Interspersed English/X batches over two datasets of the same task.
pub fn build_interspersed_batches(en: &Dataset, x: &Dataset, batch_size: usize, seed: u64) -> Result<BatchPlan> {
    same_task(en, x)?;
    BatchPlan::interspersed(Source::of(en), Source::of(x), batch_size, seed)
}

/// First-then-second schedule over two datasets of the same task.
pub fn sequential_schedule(first: &Dataset, second: &Dataset, batch_size: usize, seed: u64) -> Result<BatchPlan> {
    same_task(first, second)?;
    BatchPlan::sequential(Source::of(first), Source::of(second), batch_size, seed)
}
