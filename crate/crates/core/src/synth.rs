//! Synthetic bilingual data: two pseudo-languages with disjoint
//! vocabularies, code-switched sentences and small labelled sets for
//! sentiment, NLI and QA where the label is planted by keywords.
//!
//! Everything is a pure function of its seed.

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    write_classification_tsv, write_qa_jsonl, write_tagged_jsonl, ClassificationExample, LanguageTag, QaExample,
    TaggedSentence, NLI_LABELS, SA_LABELS,
};
use crate::error::Result;

/// Words of one pseudo-language, split by role.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    pub tag: LanguageTag,
    pub common: Vec<String>,
    pub positive: Vec<String>,
    pub negative: Vec<String>,
    pub neutral: Vec<String>,
    /// Marks a contradicting hypothesis.
    pub negation: String,
    /// Precedes the answer of a QA context.
    pub locative: String,
    /// Opens a QA question.
    pub question: String,
}

const EN_SYLLABLES: [&str; 10] = ["ba", "de", "ki", "lo", "mu", "ne", "po", "ra", "si", "tu"];
// Every syllable carries an `h` or a `y`, which no English-like syllable has,
// so the two word sets cannot overlap.
const HI_SYLLABLES: [&str; 10] = ["dha", "gho", "jhi", "khu", "pha", "sha", "thi", "vya", "zhe", "chu"];

impl Lexicon {
    fn build(tag: &str, syllables: &[&str], seed: u64) -> Self {
        let mut words: Vec<String> = syllables
            .iter()
            .flat_map(|a| syllables.iter().filter(move |b| *b != a).map(move |b| format!("{a}{b}")))
            .collect();
        words.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut take = |n: usize| words.drain(..n).collect::<Vec<_>>();
        let positive = take(3);
        let negative = take(3);
        let neutral = take(3);
        let markers = take(3);
        let common = take(40);
        Self {
            tag: LanguageTag::new(tag).expect("valid tag"),
            common,
            positive,
            negative,
            neutral,
            negation: markers[0].clone(),
            locative: markers[1].clone(),
            question: markers[2].clone(),
        }
    }

    pub fn english_like() -> Self {
        Self::build("en", &EN_SYLLABLES, 1)
    }

    pub fn hindi_like() -> Self {
        Self::build("hi", &HI_SYLLABLES, 2)
    }

    pub fn all_words(&self) -> impl Iterator<Item = &str> {
        self.common
            .iter()
            .chain(&self.positive)
            .chain(&self.negative)
            .chain(&self.neutral)
            .chain([&self.negation, &self.locative, &self.question])
            .map(String::as_str)
    }
}

fn pick<'a>(words: &'a [String], rng: &mut ChaCha8Rng) -> &'a str {
    words.choose(rng).expect("non-empty lexicon")
}

/// `(word, tag)` pairs: a monolingual run, or alternating runs of one to
/// three words starting in a random language, with at least one switch.
fn words_for(langs: &[&Lexicon], len: usize, rng: &mut ChaCha8Rng) -> Vec<(String, LanguageTag)> {
    let mut out = Vec::with_capacity(len);
    if langs.len() == 1 {
        for _ in 0..len {
            out.push((pick(&langs[0].common, rng).to_string(), langs[0].tag.clone()));
        }
        return out;
    }
    let mut current = rng.random_range(0..langs.len());
    while out.len() < len {
        let run = rng.random_range(1..=3).min(len - out.len());
        // leave room for a switch when the first run would fill the sentence
        let run = if out.is_empty() && run == len { len - 1 } else { run };
        for _ in 0..run {
            out.push((pick(&langs[current].common, rng).to_string(), langs[current].tag.clone()));
        }
        current = (current + 1) % langs.len();
    }
    out
}

fn sentence(pairs: Vec<(String, LanguageTag)>) -> TaggedSentence {
    let (words, tags): (Vec<String>, Vec<String>) = pairs.into_iter().map(|(w, t)| (w, t.as_str().to_string())).unzip();
    TaggedSentence::from_parts(&words, &tags).expect("generated sentences are well-formed")
}

/// Code-switched sentences of 4 to 10 words mixing all of `langs`; about a
/// third carry a sentiment keyword.
pub fn code_switched_corpus(langs: &[&Lexicon], n: usize, seed: u64) -> Vec<TaggedSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(4..=10);
            let mut pairs = words_for(langs, len, &mut rng);
            if rng.random_bool(1.0 / 3.0) {
                let i = rng.random_range(0..pairs.len());
                let lex = langs.iter().find(|l| l.tag == pairs[i].1).expect("tag of a lexicon");
                let pool = [&lex.positive, &lex.negative, &lex.neutral][rng.random_range(0..3)];
                pairs[i].0 = pick(pool, &mut rng).to_string();
            }
            sentence(pairs)
        })
        .collect()
}

/// Sentiment examples with balanced labels; each sentence carries one
/// keyword of its label.
pub fn sentiment_examples(langs: &[&Lexicon], n: usize, provenance: &str, seed: u64) -> Vec<ClassificationExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = SA_LABELS[i % 3];
            let len = rng.random_range(4..=8);
            let mut pairs = words_for(langs, len, &mut rng);
            let slot = rng.random_range(0..pairs.len());
            let lex = langs.iter().find(|l| l.tag == pairs[slot].1).expect("tag of a lexicon");
            let pool = match label {
                "positive" => &lex.positive,
                "negative" => &lex.negative,
                _ => &lex.neutral,
            };
            pairs[slot].0 = pick(pool, &mut rng).to_string();
            ClassificationExample {
                text_a: pairs.iter().map(|(w, _)| w.as_str()).collect::<Vec<_>>().join(" "),
                text_b: None,
                label: label.to_string(),
                language: dominant(langs),
                provenance: provenance.to_string(),
                valid: None,
            }
        })
        .collect()
}

/// The single language's tag, or the concatenated tags for mixed text.
fn dominant(langs: &[&Lexicon]) -> LanguageTag {
    LanguageTag::new(langs.iter().map(|l| l.tag.as_str()).collect::<String>()).expect("lowercase tags")
}

/// NLI pairs: the hypothesis repeats three premise words, and a contradiction
/// adds the negation marker. Labels alternate.
pub fn nli_examples(langs: &[&Lexicon], n: usize, provenance: &str, seed: u64) -> Vec<ClassificationExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = NLI_LABELS[i % 2];
            let len = rng.random_range(5..=9);
            let pairs = words_for(langs, len, &mut rng);
            let mut hyp: Vec<&str> = pairs.choose_multiple(&mut rng, 3).map(|(w, _)| w.as_str()).collect();
            if label == "contradiction" {
                let lex = langs.choose(&mut rng).expect("languages");
                let at = rng.random_range(0..=hyp.len());
                hyp.insert(at, &lex.negation);
            }
            ClassificationExample {
                text_a: pairs.iter().map(|(w, _)| w.as_str()).collect::<Vec<_>>().join(" "),
                text_b: Some(hyp.join(" ")),
                label: label.to_string(),
                language: dominant(langs),
                provenance: provenance.to_string(),
                valid: None,
            }
        })
        .collect()
}

/// QA examples: the answer is the two words after the locative marker.
pub fn qa_examples(langs: &[&Lexicon], n: usize, seed: u64) -> Vec<QaExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(6..=10);
            let mut pairs = words_for(langs, len, &mut rng);
            let lex = langs.choose(&mut rng).expect("languages");
            let at = rng.random_range(0..len - 2);
            pairs[at] = (lex.locative.clone(), lex.tag.clone());
            let words: Vec<&str> = pairs.iter().map(|(w, _)| w.as_str()).collect();
            let answer = words[at + 1..at + 3].join(" ");
            let answer_start = words[..=at].iter().map(|w| w.chars().count() + 1).sum();
            let question = format!("{} {}", lex.question, pick(&lex.common, &mut rng));
            QaExample {
                context: words.join(" "),
                question,
                answer_text: answer,
                answer_start,
                language: dominant(langs),
            }
        })
        .collect()
}

/// Sizes of the generated sentiment benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchmarkSizes {
    pub code_switched_corpus: usize,
    pub monolingual_train: usize,
    pub target_train: usize,
    pub target_dev: usize,
    pub target_test: usize,
}

impl Default for BenchmarkSizes {
    fn default() -> Self {
        Self {
            code_switched_corpus: 400,
            monolingual_train: 240,
            target_train: 240,
            target_dev: 120,
            target_test: 120,
        }
    }
}

/// A code-switched sentiment task with English-like and Hindi-like
/// intermediate data.
#[derive(Debug, Clone)]
pub struct SentimentBenchmark {
    pub en: Lexicon,
    pub hi: Lexicon,
    pub corpus: Vec<TaggedSentence>,
    pub en_train: Vec<ClassificationExample>,
    pub hi_train: Vec<ClassificationExample>,
    pub target_train: Vec<ClassificationExample>,
    pub target_dev: Vec<ClassificationExample>,
    pub target_test: Vec<ClassificationExample>,
}

impl SentimentBenchmark {
    pub fn generate(sizes: BenchmarkSizes, seed: u64) -> Self {
        let en = Lexicon::english_like();
        let hi = Lexicon::hindi_like();
        let both = [&en, &hi];
        let s = |k: u64| seed.wrapping_mul(31).wrapping_add(k);
        Self {
            corpus: code_switched_corpus(&both, sizes.code_switched_corpus, s(1)),
            en_train: sentiment_examples(&[&en], sizes.monolingual_train, "synthetic-en", s(2)),
            hi_train: sentiment_examples(&[&hi], sizes.monolingual_train, "synthetic-hi", s(3)),
            target_train: sentiment_examples(&both, sizes.target_train, "synthetic-cs", s(4)),
            target_dev: sentiment_examples(&both, sizes.target_dev, "synthetic-cs", s(5)),
            target_test: sentiment_examples(&both, sizes.target_test, "synthetic-cs", s(6)),
            en,
            hi,
        }
    }

    /// All surface words of every generated set, for vocabulary training.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        let classification = self
            .en_train
            .iter()
            .chain(&self.hi_train)
            .chain(&self.target_train)
            .flat_map(|e| e.text_a.split_whitespace());
        self.corpus.iter().flat_map(|s| s.surfaces()).chain(classification)
    }

    /// Writes `corpus.jsonl`, `en_train.tsv`, `hi_train.tsv`, `cs_train.tsv`,
    /// `cs_dev.tsv` and `cs_test.tsv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
        write_tagged_jsonl(dir.join("corpus.jsonl"), &self.corpus)?;
        write_classification_tsv(dir.join("en_train.tsv"), &self.en_train)?;
        write_classification_tsv(dir.join("hi_train.tsv"), &self.hi_train)?;
        write_classification_tsv(dir.join("cs_train.tsv"), &self.target_train)?;
        write_classification_tsv(dir.join("cs_dev.tsv"), &self.target_dev)?;
        write_classification_tsv(dir.join("cs_test.tsv"), &self.target_test)
    }
}

/// Writes a small QA set as JSONL, for demonstrations.
pub fn write_qa_sample(path: &Path, n: usize, seed: u64) -> Result<()> {
    let en = Lexicon::english_like();
    let hi = Lexicon::hindi_like();
    write_qa_jsonl(path, &qa_examples(&[&en, &hi], n, seed))
}
