//! Turning datasets into model inputs, and scoring predictions on held-out
//! sets.

use crate::corpus::{ClassificationExample, QaExample, TaggedSentence, TaskKind};
use crate::error::{Error, Result};
use crate::masking::{mask_corpus, MaskingPolicy};
use crate::metrics::{evaluate_accuracy, evaluate_weighted_f1, mean_token_f1};
use crate::model::{argmax, best_span, forward, Head, Logits, ModelConfig, Parameters, Target, TrainingExample};
use crate::tokenizer::{Encoding, Vocabulary};

use super::stopping::Metric;

/// Longest answer, in tokens, considered at prediction time.
pub const MAX_ANSWER_TOKENS: usize = 30;

pub fn head_for(task: TaskKind) -> Head {
    match task {
        TaskKind::Mlm => Head::Mlm,
        TaskKind::Nli | TaskKind::Sa => Head::Classify,
        TaskKind::Qa => Head::Span,
    }
}

pub fn metric_for(task: TaskKind) -> Metric {
    match task {
        TaskKind::Mlm => Metric::MaskedAccuracy,
        TaskKind::Nli => Metric::Accuracy,
        TaskKind::Sa => Metric::WeightedF1,
        TaskKind::Qa => Metric::TokenF1,
    }
}

pub fn num_labels(task: TaskKind) -> usize {
    task.labels().map_or(0, <[&str]>::len)
}

fn label_id(task: TaskKind, ex: &ClassificationExample) -> Result<usize> {
    task.label_id(&ex.label)
        .ok_or_else(|| Error::InvalidExample(format!("label {:?} is not a {task} label", ex.label)))
}

fn encode_pair(vocab: &Vocabulary, ex: &ClassificationExample, max_len: usize) -> Result<Encoding> {
    vocab.encode_text(&ex.text_a, ex.text_b.as_deref(), max_len)
}

pub fn classification_examples(
    task: TaskKind,
    examples: &[ClassificationExample],
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<TrainingExample>> {
    examples
        .iter()
        .map(|ex| {
            Ok(TrainingExample {
                encoding: encode_pair(vocab, ex, max_len)?,
                target: Target::Label(label_id(task, ex)?),
            })
        })
        .collect()
}

/// Context words and the inclusive word range covered by the answer.
fn answer_words(ex: &QaExample) -> Result<(Vec<String>, usize, usize)> {
    ex.validate()?;
    let mut words = Vec::new();
    let mut spans = Vec::new();
    let mut current: Option<(usize, String)> = None;
    for (i, c) in ex.context.chars().enumerate() {
        if c.is_whitespace() {
            if let Some((start, w)) = current.take() {
                spans.push((start, i));
                words.push(w);
            }
        } else {
            current.get_or_insert_with(|| (i, String::new())).1.push(c);
        }
    }
    if let Some((start, w)) = current {
        spans.push((start, start + w.chars().count()));
        words.push(w);
    }
    let a = ex.answer_start;
    let b = a + ex.answer_text.chars().count();
    let first = spans.iter().position(|&(_, e)| e > a);
    let last = spans.iter().rposition(|&(s, _)| s < b);
    match (first, last) {
        (Some(f), Some(l)) if f <= l => Ok((words, f, l)),
        _ => Err(Error::InvalidExample(format!("answer {:?} covers no context word", ex.answer_text))),
    }
}

fn encode_qa(vocab: &Vocabulary, ex: &QaExample, context: &[String], max_len: usize) -> Result<Encoding> {
    let question: Vec<&str> = ex.question.split_whitespace().collect();
    vocab.encode_words(&question, Some(context), max_len)
}

/// Span-extraction examples. Examples whose answer was cut off by
/// truncation are dropped; the second value counts them.
pub fn qa_examples(examples: &[QaExample], vocab: &Vocabulary, max_len: usize) -> Result<(Vec<TrainingExample>, usize)> {
    let mut out = Vec::new();
    let mut dropped = 0;
    for ex in examples {
        let (context, first, last) = answer_words(ex)?;
        let encoding = encode_qa(vocab, ex, &context, max_len)?;
        let in_context = |pos: usize, word: usize| encoding.segment_ids[pos] == 1 && encoding.word_index[pos] == Some(word);
        let start = (0..encoding.len()).find(|&p| in_context(p, first));
        let end = (0..encoding.len()).rev().find(|&p| in_context(p, last));
        match (start, end) {
            (Some(start), Some(end)) => out.push(TrainingExample {
                encoding,
                target: Target::Span { start, end },
            }),
            _ => dropped += 1,
        }
    }
    Ok((out, dropped))
}

/// Masked-LM examples. Returns the examples and the number of sentences the
/// policy skipped; sentences where nothing was selected are left out.
pub fn mlm_examples(
    corpus: &[TaggedSentence],
    vocab: &Vocabulary,
    max_len: usize,
    policy: &MaskingPolicy,
    seed: u64,
) -> Result<(Vec<TrainingExample>, usize)> {
    let masked = mask_corpus(corpus, vocab, max_len, policy, seed)?;
    let mut out = Vec::with_capacity(masked.examples.len());
    for (i, ex) in masked.examples {
        if ex.selected.is_empty() {
            continue;
        }
        let mut encoding = vocab.encode_sentence(&corpus[i], max_len)?;
        encoding.token_ids = ex.input_ids;
        out.push(TrainingExample {
            encoding,
            target: Target::Mlm(ex.labels),
        });
    }
    Ok((out, masked.skipped))
}

/// A held-out set ready for scoring.
#[derive(Debug, Clone)]
pub enum EvalSet {
    Classification {
        metric: Metric,
        num_labels: usize,
        encodings: Vec<Encoding>,
        gold: Vec<usize>,
    },
    Qa {
        encodings: Vec<Encoding>,
        contexts: Vec<Vec<String>>,
        answers: Vec<String>,
    },
    Mlm {
        examples: Vec<TrainingExample>,
    },
}

impl EvalSet {
    pub fn classification(task: TaskKind, examples: &[ClassificationExample], vocab: &Vocabulary, max_len: usize) -> Result<Self> {
        let mut encodings = Vec::with_capacity(examples.len());
        let mut gold = Vec::with_capacity(examples.len());
        for ex in examples {
            encodings.push(encode_pair(vocab, ex, max_len)?);
            gold.push(label_id(task, ex)?);
        }
        Ok(EvalSet::Classification {
            metric: metric_for(task),
            num_labels: num_labels(task),
            encodings,
            gold,
        })
    }

    /// Every example is kept, including those whose answer is truncated away.
    pub fn qa(examples: &[QaExample], vocab: &Vocabulary, max_len: usize) -> Result<Self> {
        let mut encodings = Vec::new();
        let mut contexts = Vec::new();
        let mut answers = Vec::new();
        for ex in examples {
            let (context, _, _) = answer_words(ex)?;
            encodings.push(encode_qa(vocab, ex, &context, max_len)?);
            contexts.push(context);
            answers.push(ex.answer_text.clone());
        }
        Ok(EvalSet::Qa {
            encodings,
            contexts,
            answers,
        })
    }

    pub fn mlm(corpus: &[TaggedSentence], vocab: &Vocabulary, max_len: usize, policy: &MaskingPolicy, seed: u64) -> Result<Self> {
        Ok(EvalSet::Mlm {
            examples: mlm_examples(corpus, vocab, max_len, policy, seed)?.0,
        })
    }

    /// Scores a classification set by `metric` instead of its task default.
    pub fn with_metric(mut self, metric: Metric) -> Self {
        if let EvalSet::Classification { metric: m, .. } = &mut self {
            *m = metric;
        }
        self
    }

    pub fn len(&self) -> usize {
        match self {
            EvalSet::Classification { gold, .. } => gold.len(),
            EvalSet::Qa { answers, .. } => answers.len(),
            EvalSet::Mlm { examples } => examples.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn score(&self, config: &ModelConfig, params: &Parameters) -> Result<f64> {
        match self {
            EvalSet::Classification {
                metric,
                num_labels,
                encodings,
                gold,
            } => {
                let predictions: Vec<usize> = forward(config, params, encodings, Head::Classify)?
                    .into_iter()
                    .map(|l| match l {
                        Logits::Classify(v) => argmax(v.as_slice().expect("contiguous")),
                        _ => unreachable!("classification head"),
                    })
                    .collect();
                match metric {
                    Metric::WeightedF1 => {
                        let labels: Vec<usize> = (0..*num_labels).collect();
                        Ok(evaluate_weighted_f1(&predictions, gold, &labels)?.f1)
                    }
                    _ => evaluate_accuracy(&predictions, gold),
                }
            }
            EvalSet::Qa {
                encodings,
                contexts,
                answers,
            } => {
                let logits = forward(config, params, encodings, Head::Span)?;
                let predicted: Vec<String> = logits
                    .iter()
                    .zip(encodings)
                    .zip(contexts)
                    .map(|((l, enc), context)| predict_answer(l, enc, context))
                    .collect();
                mean_token_f1(predicted.iter().map(String::as_str).zip(answers.iter().map(String::as_str)))
            }
            EvalSet::Mlm { examples } => {
                if examples.is_empty() {
                    return Err(Error::EmptyEvaluation);
                }
                let encodings: Vec<Encoding> = examples.iter().map(|e| e.encoding.clone()).collect();
                let logits = forward(config, params, &encodings, Head::Mlm)?;
                let (mut correct, mut total) = (0usize, 0usize);
                for (l, ex) in logits.iter().zip(examples) {
                    let (Logits::Mlm(l), Target::Mlm(labels)) = (l, &ex.target) else {
                        unreachable!("MLM head and targets")
                    };
                    for (pos, &label) in labels.iter().enumerate() {
                        if label >= 0 {
                            total += 1;
                            correct += usize::from(argmax(&l.row(pos).to_vec()) as i64 == label);
                        }
                    }
                }
                Ok(correct as f64 / total as f64)
            }
        }
    }
}

/// Context words under the best-scoring span, joined by spaces.
fn predict_answer(logits: &Logits, enc: &Encoding, context: &[String]) -> String {
    let Logits::Span { start, end } = logits else {
        unreachable!("span head")
    };
    let allowed: Vec<bool> = (0..enc.len())
        .map(|p| enc.attention_mask[p] == 1 && enc.segment_ids[p] == 1 && enc.word_index[p].is_some())
        .collect();
    let (Some(s), Some(e)) = (start.as_slice(), end.as_slice()) else {
        unreachable!("contiguous logits")
    };
    match best_span(s, e, &allowed, MAX_ANSWER_TOKENS) {
        Some((i, j)) => {
            let (a, b) = (enc.word_index[i].expect("allowed"), enc.word_index[j].expect("allowed"));
            context[a..=b].join(" ")
        }
        None => String::new(),
    }
}
