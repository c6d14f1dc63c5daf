//! Masked-LM example generation.
//!
//! Two policies are supported: standard masking, where any non-special token
//! may be selected, and switch-boundary masking, where only tokens of words
//! adjacent to a language switch are candidates. Sentences without a switch
//! cannot be used for switch-boundary masking and are reported as skipped.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TaggedSentence;
use crate::error::{Error, Result};
use crate::tokenizer::{Encoding, Vocabulary, MASK, NUM_SPECIALS};

/// Label value for positions that do not contribute to the MLM loss.
pub const IGNORE_LABEL: i64 = -100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskingKind {
    Standard,
    SwitchBoundary,
}

/// How a selected token is corrupted: replaced by `[MASK]`, by a random
/// token, or kept as is.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corruption {
    pub mask: f64,
    pub random: f64,
    pub keep: f64,
}

impl Default for Corruption {
    fn default() -> Self {
        Self {
            mask: 0.8,
            random: 0.1,
            keep: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskingPolicy {
    pub kind: MaskingKind,
    #[serde(default = "default_select_rate")]
    pub select_rate: f64,
    #[serde(default)]
    pub corruption: Corruption,
    /// Select whole words instead of individual subword tokens.
    #[serde(default)]
    pub whole_word: bool,
}

fn default_select_rate() -> f64 {
    0.15
}

impl MaskingPolicy {
    pub fn standard() -> Self {
        Self {
            kind: MaskingKind::Standard,
            select_rate: default_select_rate(),
            corruption: Corruption::default(),
            whole_word: false,
        }
    }

    pub fn switch_boundary() -> Self {
        Self {
            kind: MaskingKind::SwitchBoundary,
            ..Self::standard()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.corruption;
        let in_unit = |p: f64| (0.0..=1.0).contains(&p);
        if !(self.select_rate > 0.0 && self.select_rate <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "select_rate {} must lie in (0, 1]",
                self.select_rate
            )));
        }
        if !(in_unit(c.mask) && in_unit(c.random) && in_unit(c.keep))
            || (c.mask + c.random + c.keep - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidArgument(format!(
                "corruption probabilities {c:?} must be in [0, 1] and sum to 1"
            )));
        }
        Ok(())
    }
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        Self::standard()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedLmExample {
    pub input_ids: Vec<u32>,
    /// Original id at selected positions, [`IGNORE_LABEL`] elsewhere.
    pub labels: Vec<i64>,
    pub selected: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaskOutcome {
    Masked(MaskedLmExample),
    /// The sentence has no language switch and is unusable for
    /// switch-boundary masking.
    Skipped,
}

/// Positions of words that have a neighbour tagged with another language.
pub fn boundary_word_indices(sentence: &TaggedSentence) -> BTreeSet<usize> {
    let words = sentence.words();
    (0..words.len())
        .filter(|&i| {
            let differs = |j: usize| words[j].tag != words[i].tag;
            (i > 0 && differs(i - 1)) || (i + 1 < words.len() && differs(i + 1))
        })
        .collect()
}

/// Corrupts `encoding` for MLM under `policy`, deterministically in `seed`.
///
/// `vocab_size` bounds the random-replacement branch, which draws uniformly
/// from the non-special ids.
pub fn make_mlm_example(
    encoding: &Encoding,
    sentence: &TaggedSentence,
    policy: &MaskingPolicy,
    vocab_size: usize,
    seed: u64,
) -> Result<MaskOutcome> {
    policy.validate()?;
    check_alignment(encoding, sentence)?;
    if vocab_size <= NUM_SPECIALS as usize && policy.corruption.random > 0.0 {
        return Err(Error::InvalidArgument(
            "random replacement needs at least one non-special token".into(),
        ));
    }

    let allowed: Option<BTreeSet<usize>> = match policy.kind {
        MaskingKind::Standard => None,
        MaskingKind::SwitchBoundary => {
            let words = boundary_word_indices(sentence);
            if words.is_empty() {
                return Ok(MaskOutcome::Skipped);
            }
            Some(words)
        }
    };
    let candidates: Vec<(usize, usize)> = encoding
        .word_index
        .iter()
        .enumerate()
        .filter_map(|(pos, w)| w.map(|w| (pos, w)))
        .filter(|(_, w)| allowed.as_ref().is_none_or(|set| set.contains(w)))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let selected: Vec<usize> = if policy.whole_word {
        let mut words: Vec<usize> = candidates.iter().map(|&(_, w)| w).collect();
        words.dedup();
        let chosen: BTreeSet<usize> = words
            .into_iter()
            .filter(|_| rng.random::<f64>() < policy.select_rate)
            .collect();
        candidates
            .iter()
            .filter(|(_, w)| chosen.contains(w))
            .map(|&(pos, _)| pos)
            .collect()
    } else {
        candidates
            .iter()
            .filter(|_| rng.random::<f64>() < policy.select_rate)
            .map(|&(pos, _)| pos)
            .collect()
    };

    let mut input_ids = encoding.token_ids.clone();
    let mut labels = vec![IGNORE_LABEL; input_ids.len()];
    let c = policy.corruption;
    for &pos in &selected {
        labels[pos] = i64::from(input_ids[pos]);
        let r: f64 = rng.random();
        if r < c.mask {
            input_ids[pos] = MASK;
        } else if r < c.mask + c.random {
            input_ids[pos] = rng.random_range(NUM_SPECIALS..vocab_size as u32);
        }
    }
    Ok(MaskOutcome::Masked(MaskedLmExample {
        input_ids,
        labels,
        selected,
    }))
}

fn check_alignment(encoding: &Encoding, sentence: &TaggedSentence) -> Result<()> {
    let n = encoding.token_ids.len();
    if encoding.word_index.len() != n
        || encoding.segment_ids.len() != n
        || encoding.attention_mask.len() != n
    {
        return Err(Error::EncodingMismatch("encoding fields differ in length".into()));
    }
    for (pos, w) in encoding.word_index.iter().enumerate() {
        if let Some(w) = *w {
            if w >= sentence.len() {
                return Err(Error::EncodingMismatch(format!(
                    "token {pos} points at word {w}, sentence has {} words",
                    sentence.len()
                )));
            }
            if encoding.segment_ids[pos] != 0 {
                return Err(Error::EncodingMismatch(
                    "MLM examples are single-segment".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Masked examples for a whole corpus.
#[derive(Debug, Clone, Default)]
pub struct MaskedCorpus {
    /// `(sentence index, example)` pairs in corpus order.
    pub examples: Vec<(usize, MaskedLmExample)>,
    pub skipped: usize,
}

/// Masks every sentence of `corpus`; sentence `i` uses seed `base_seed + i`
/// so the result does not depend on how the work is partitioned.
pub fn mask_corpus(
    corpus: &[TaggedSentence],
    vocab: &Vocabulary,
    max_len: usize,
    policy: &MaskingPolicy,
    base_seed: u64,
) -> Result<MaskedCorpus> {
    let mut out = MaskedCorpus::default();
    for (i, sentence) in corpus.iter().enumerate() {
        let enc = vocab.encode_sentence(sentence, max_len)?;
        let seed = base_seed.wrapping_add(i as u64);
        match make_mlm_example(&enc, sentence, policy, vocab.len(), seed)? {
            MaskOutcome::Masked(ex) => out.examples.push((i, ex)),
            MaskOutcome::Skipped => out.skipped += 1,
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct DumpRecord<'a> {
    input_ids: &'a [u32],
    labels: &'a [i64],
    selected: &'a [usize],
    #[serde(skip_serializing_if = "Option::is_none")]
    config_digest: Option<&'a str>,
}

/// Writes masked examples as JSONL `{input_ids, labels, selected}` records.
pub fn write_masked_jsonl<'a>(
    path: impl AsRef<Path>,
    examples: impl IntoIterator<Item = &'a MaskedLmExample>,
    config_digest: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        let rec = DumpRecord {
            input_ids: &ex.input_ids,
            labels: &ex.labels,
            selected: &ex.selected,
            config_digest,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
