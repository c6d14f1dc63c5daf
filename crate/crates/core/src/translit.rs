//! Word-level transducers (transliteration or translation stand-ins) and
//! piecewise transliteration of QA examples with answer-span correction.
//!
//! Text is processed as whitespace-delimited words; the output always joins
//! words with single spaces.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::corpus::{ClassificationExample, QaExample};
use crate::error::{Error, Result};

/// A pure, deterministic word-to-word mapping.
pub trait WordTransducer: Send + Sync {
    fn transduce(&self, word: &str) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl WordTransducer for Identity {
    fn transduce(&self, word: &str) -> String {
        word.to_string()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Uppercase;

impl WordTransducer for Uppercase {
    fn transduce(&self, word: &str) -> String {
        word.to_uppercase()
    }
}

/// Writes every ASCII vowel twice; changes word lengths.
#[derive(Debug, Clone, Copy, Default)]
pub struct VowelDoubling;

impl WordTransducer for VowelDoubling {
    fn transduce(&self, word: &str) -> String {
        let mut out = String::with_capacity(word.len() * 2);
        for ch in word.chars() {
            out.push(ch);
            if "aeiouAEIOU".contains(ch) {
                out.push(ch);
            }
        }
        out
    }
}

/// Replays cached outputs of an external tool. Words missing from the table
/// pass through unchanged.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LookupTable {
    map: HashMap<String, String>,
}

impl LookupTable {
    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, S)>) -> Result<Self> {
        let mut map = HashMap::new();
        for (src, dst) in pairs {
            let (src, dst) = (src.into(), dst.into());
            for w in [&src, &dst] {
                if w.is_empty() || w.chars().any(char::is_whitespace) {
                    return Err(Error::InvalidArgument(format!("table entry {w:?} is not a single word")));
                }
            }
            if let Some(prev) = map.get(&src) {
                if *prev != dst {
                    return Err(Error::InvalidArgument(format!(
                        "conflicting table entries for {src:?}: {prev:?} and {dst:?}"
                    )));
                }
            }
            map.insert(src, dst);
        }
        Ok(Self { map })
    }

    /// Loads a two-column `source_word \t target_word` file.
    pub fn load_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match line.split('\t').collect::<Vec<_>>().as_slice() {
                [src, dst] => pairs.push((src.to_string(), dst.to_string())),
                cols => {
                    return Err(Error::parse(
                        path,
                        i + 1,
                        format!("expected 2 tab-separated columns, found {}", cols.len()),
                    ))
                }
            }
        }
        Self::from_pairs(pairs).map_err(|e| Error::parse(path, 0, e.to_string()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl WordTransducer for LookupTable {
    fn transduce(&self, word: &str) -> String {
        self.map.get(word).cloned().unwrap_or_else(|| word.to_string())
    }
}

/// Resolves one of the built-in transducer names.
pub fn builtin(name: &str) -> Option<Box<dyn WordTransducer>> {
    match name {
        "identity" => Some(Box::new(Identity)),
        "uppercase" => Some(Box::new(Uppercase)),
        "vowel-doubling" => Some(Box::new(VowelDoubling)),
        _ => None,
    }
}

fn transduce_word(t: &dyn WordTransducer, word: &str) -> Result<String> {
    let out = t.transduce(word);
    if out.is_empty() || out.chars().any(char::is_whitespace) {
        return Err(Error::TransducerOutput {
            input: word.to_string(),
            output: out,
        });
    }
    Ok(out)
}

/// Maps every whitespace word of `text` and joins the results with single
/// spaces.
pub fn transliterate_text(text: &str, t: &dyn WordTransducer) -> Result<String> {
    let words = text
        .split_whitespace()
        .map(|w| transduce_word(t, w))
        .collect::<Result<Vec<_>>>()?;
    Ok(words.join(" "))
}

/// A transliterated QA example with its recomputed answer offset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanCorrection {
    pub new_context: String,
    pub new_question: String,
    pub new_answer: String,
    /// Character offset of `new_answer` inside `new_context`.
    pub new_start: usize,
    /// Whether `new_context` really holds `new_answer` at `new_start`.
    pub verified: bool,
}

impl SpanCorrection {
    /// The corrected example, or `None` if verification failed.
    pub fn into_example(self, original: &QaExample) -> Option<QaExample> {
        self.verified.then(|| QaExample {
            context: self.new_context,
            question: self.new_question,
            answer_text: self.new_answer,
            answer_start: self.new_start,
            language: original.language.clone(),
        })
    }
}

/// `(start_char, end_char)` of every whitespace-delimited word.
fn word_char_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    let mut n = 0;
    for (i, ch) in text.chars().enumerate() {
        match (ch.is_whitespace(), start) {
            (true, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
        n = i + 1;
    }
    if let Some(s) = start {
        spans.push((s, n));
    }
    spans
}

/// Transliterates context, question and answer word by word and recomputes
/// the answer offset from the transliterated lengths of the preceding words.
pub fn transliterate_qa_example(example: &QaExample, t: &dyn WordTransducer) -> Result<SpanCorrection> {
    example.validate()?;
    let answer_len = example.answer_text.chars().count();
    if example.answer_text.trim().is_empty() {
        return Err(Error::InvalidExample("answer text is empty".into()));
    }
    let start = example.answer_start;
    let end = start + answer_len;

    let spans = word_char_spans(&example.context);
    let first = spans.iter().position(|&(s, _)| s == start);
    let last = spans.iter().position(|&(_, e)| e == end);
    let Some(first) = first.filter(|&f| last.is_some_and(|l| l >= f)) else {
        return Err(Error::AnswerNotAligned { start, end });
    };

    let words = example
        .context
        .split_whitespace()
        .map(|w| transduce_word(t, w))
        .collect::<Result<Vec<_>>>()?;
    let new_start: usize = words[..first].iter().map(|w| w.chars().count() + 1).sum();
    let new_context = words.join(" ");
    let new_answer = transliterate_text(&example.answer_text, t)?;
    let new_question = transliterate_text(&example.question, t)?;

    let extracted: String = new_context
        .chars()
        .skip(new_start)
        .take(new_answer.chars().count())
        .collect();
    Ok(SpanCorrection {
        verified: extracted == new_answer,
        new_context,
        new_question,
        new_answer,
        new_start,
    })
}

/// Transliterates both text segments; label and provenance are untouched.
pub fn transliterate_classification_example(
    example: &ClassificationExample,
    t: &dyn WordTransducer,
) -> Result<ClassificationExample> {
    Ok(ClassificationExample {
        text_a: transliterate_text(&example.text_a, t)?,
        text_b: example
            .text_b
            .as_deref()
            .map(|b| transliterate_text(b, t))
            .transpose()?,
        ..example.clone()
    })
}
