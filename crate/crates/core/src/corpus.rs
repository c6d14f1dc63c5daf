//! Datasets and corpora: language-tagged sentences, classification pairs and
//! extractive QA examples, plus the filtering and merging steps applied before
//! training.
//!
//! File formats:
//!
//! * tagged corpora: JSONL, one `{"words": [..], "tags": [..]}` object per line;
//! * classification sets: TSV `text_a \t text_b \t label \t language [\t valid]`,
//!   or `text_a \t label \t language` when there is no second segment;
//! * QA sets: JSONL with the [`QaExample`] fields.
//!
//! All character offsets are Unicode scalar-value offsets.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Separator between dialogue turns in code-switched NLI premises.
pub const DIALOGUE_SEPARATOR: &str = "##";

/// Minimum words a premise dialogue needs to be kept for MLM.
pub const MIN_DIALOGUE_WORDS: usize = 5;

pub const NLI_LABELS: &[&str] = &["entailment", "contradiction"];
pub const SA_LABELS: &[&str] = &["positive", "negative", "neutral"];

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LanguageTag(String);

impl LanguageTag {
    pub fn new(code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        if code.is_empty() || !code.bytes().all(|b| b.is_ascii_lowercase()) {
            return Err(Error::InvalidTag(code));
        }
        Ok(Self(code))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for LanguageTag {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Self::new(value)
    }
}

impl From<LanguageTag> for String {
    fn from(tag: LanguageTag) -> Self {
        tag.0
    }
}

impl fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedWord {
    pub surface: String,
    pub tag: LanguageTag,
}

/// A sentence as ordered words, each carrying the language it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "TaggedLine", into = "TaggedLine")]
pub struct TaggedSentence {
    words: Vec<TaggedWord>,
}

impl TaggedSentence {
    pub fn new(words: Vec<TaggedWord>) -> Result<Self> {
        for w in &words {
            if w.surface.is_empty() || w.surface.chars().any(char::is_whitespace) {
                return Err(Error::InvalidSentence(format!(
                    "word {:?} must be non-empty and contain no whitespace",
                    w.surface
                )));
            }
        }
        Ok(Self { words })
    }

    /// Builds a sentence from parallel word and tag lists.
    pub fn from_parts<S: AsRef<str>, T: AsRef<str>>(words: &[S], tags: &[T]) -> Result<Self> {
        if words.len() != tags.len() {
            return Err(Error::InvalidSentence(format!(
                "{} words but {} tags",
                words.len(),
                tags.len()
            )));
        }
        let words = words
            .iter()
            .zip(tags)
            .map(|(w, t)| {
                Ok(TaggedWord {
                    surface: w.as_ref().to_string(),
                    tag: LanguageTag::new(t.as_ref())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(words)
    }

    pub fn words(&self) -> &[TaggedWord] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(|w| w.surface.as_str())
    }

    pub fn tags(&self) -> impl Iterator<Item = &LanguageTag> {
        self.words.iter().map(|w| &w.tag)
    }

    pub fn text(&self) -> String {
        self.surfaces().collect::<Vec<_>>().join(" ")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaggedLine {
    words: Vec<String>,
    tags: Vec<String>,
}

impl TryFrom<TaggedLine> for TaggedSentence {
    type Error = Error;

    fn try_from(line: TaggedLine) -> Result<Self> {
        Self::from_parts(&line.words, &line.tags)
    }
}

impl From<TaggedSentence> for TaggedLine {
    fn from(s: TaggedSentence) -> Self {
        let (words, tags) = s
            .words
            .into_iter()
            .map(|w| (w.surface, String::from(w.tag)))
            .unzip();
        TaggedLine { words, tags }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Mlm,
    Nli,
    Sa,
    Qa,
}

impl TaskKind {
    /// Label names for classification tasks, in label-id order.
    pub fn labels(self) -> Option<&'static [&'static str]> {
        match self {
            TaskKind::Nli => Some(NLI_LABELS),
            TaskKind::Sa => Some(SA_LABELS),
            TaskKind::Mlm | TaskKind::Qa => None,
        }
    }

    pub fn label_id(self, label: &str) -> Option<usize> {
        self.labels()?.iter().position(|l| *l == label)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskKind::Mlm => "mlm",
            TaskKind::Nli => "nli",
            TaskKind::Sa => "sa",
            TaskKind::Qa => "qa",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationExample {
    pub text_a: String,
    pub text_b: Option<String>,
    pub label: String,
    pub language: LanguageTag,
    pub provenance: String,
    /// XNLI-style match attribute; `Some(false)` marks an example to drop.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaExample {
    pub context: String,
    pub question: String,
    pub answer_text: String,
    /// Character offset of the answer inside `context`.
    pub answer_start: usize,
    pub language: LanguageTag,
}

impl QaExample {
    /// Checks that the answer occurs in the context at `answer_start`.
    pub fn validate(&self) -> Result<()> {
        let span: String = self
            .context
            .chars()
            .skip(self.answer_start)
            .take(self.answer_text.chars().count())
            .collect();
        if span != self.answer_text {
            return Err(Error::InvalidExample(format!(
                "context span at {} is {:?}, expected answer {:?}",
                self.answer_start, span, self.answer_text
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "items", rename_all = "lowercase")]
pub enum Examples {
    Tagged(Vec<TaggedSentence>),
    Classification(Vec<ClassificationExample>),
    Qa(Vec<QaExample>),
}

impl Examples {
    pub fn len(&self) -> usize {
        match self {
            Examples::Tagged(v) => v.len(),
            Examples::Classification(v) => v.len(),
            Examples::Qa(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn fits(&self, task: TaskKind) -> bool {
        matches!(
            (self, task),
            (Examples::Tagged(_), TaskKind::Mlm)
                | (Examples::Classification(_), TaskKind::Nli | TaskKind::Sa)
                | (Examples::Qa(_), TaskKind::Qa)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    id: String,
    task: TaskKind,
    split: Split,
    examples: Examples,
}

impl Dataset {
    pub fn new(id: impl Into<String>, task: TaskKind, split: Split, examples: Examples) -> Result<Self> {
        if !examples.fits(task) {
            return Err(Error::TaskMismatch {
                expected: task.to_string(),
                found: match &examples {
                    Examples::Tagged(_) => "tagged sentences".into(),
                    Examples::Classification(_) => "classification examples".into(),
                    Examples::Qa(_) => "qa examples".into(),
                },
            });
        }
        match &examples {
            Examples::Classification(items) => {
                for ex in items {
                    if task.label_id(&ex.label).is_none() {
                        return Err(Error::InvalidExample(format!(
                            "label {:?} is not a {task} label",
                            ex.label
                        )));
                    }
                }
            }
            Examples::Qa(items) => items.iter().try_for_each(QaExample::validate)?,
            Examples::Tagged(_) => {}
        }
        Ok(Self {
            id: id.into(),
            task,
            split,
            examples,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn examples(&self) -> &Examples {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Splits a dialogue premise on `##` and keeps the turns with at least
/// `min_words` whitespace-delimited words.
pub fn split_premise_dialogues(premise: &str, min_words: usize) -> Vec<String> {
    premise
        .split(DIALOGUE_SEPARATOR)
        .map(str::trim)
        .filter(|seg| seg.split_whitespace().count() >= min_words.max(1))
        .map(str::to_string)
        .collect()
}

/// Keeps examples whose label is in `keep_labels` and which are not flagged
/// invalid.
pub fn filter_nli_examples(
    examples: &[ClassificationExample],
    keep_labels: &BTreeSet<String>,
) -> Vec<ClassificationExample> {
    examples
        .iter()
        .filter(|ex| ex.valid != Some(false) && keep_labels.contains(&ex.label))
        .cloned()
        .collect()
}

/// Concatenates an English and an X-language training set of the same task.
pub fn merge_bilingual_dataset(en: &Dataset, x: &Dataset) -> Result<Dataset> {
    if en.task != x.task {
        return Err(Error::TaskMismatch {
            expected: en.task.to_string(),
            found: x.task.to_string(),
        });
    }
    if en.split != Split::Train || x.split != Split::Train {
        return Err(Error::InvalidArgument(
            "bilingual merging expects two train splits".into(),
        ));
    }
    let examples = match (&en.examples, &x.examples) {
        (Examples::Tagged(a), Examples::Tagged(b)) => {
            Examples::Tagged(a.iter().chain(b).cloned().collect())
        }
        (Examples::Classification(a), Examples::Classification(b)) => {
            Examples::Classification(a.iter().chain(b).cloned().collect())
        }
        (Examples::Qa(a), Examples::Qa(b)) => Examples::Qa(a.iter().chain(b).cloned().collect()),
        _ => unreachable!("datasets of one task hold one example kind"),
    };
    Ok(Dataset {
        id: format!("{}+{}", en.id, x.id),
        task: en.task,
        split: Split::Train,
        examples,
    })
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, Result<String>)> + '_> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(move |(i, l)| (i + 1, l.map_err(|e| Error::io(path, e)))))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (line_no, line) in open_lines(path)? {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        out.push(item);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_tagged_jsonl(path: impl AsRef<Path>) -> Result<Vec<TaggedSentence>> {
    read_jsonl(path.as_ref())
}

pub fn write_tagged_jsonl(path: impl AsRef<Path>, sentences: &[TaggedSentence]) -> Result<()> {
    write_jsonl(path.as_ref(), sentences)
}

pub fn read_qa_jsonl(path: impl AsRef<Path>) -> Result<Vec<QaExample>> {
    let path = path.as_ref();
    let items: Vec<QaExample> = read_jsonl(path)?;
    for (i, ex) in items.iter().enumerate() {
        ex.validate()
            .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
    }
    Ok(items)
}

pub fn write_qa_jsonl(path: impl AsRef<Path>, examples: &[QaExample]) -> Result<()> {
    write_jsonl(path.as_ref(), examples)
}

/// Reads a classification TSV; `provenance` is recorded on every example.
pub fn read_classification_tsv(
    path: impl AsRef<Path>,
    provenance: &str,
) -> Result<Vec<ClassificationExample>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (line_no, line) in open_lines(path)? {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let (text_a, text_b, label, language, valid) = match cols.as_slice() {
            [a, label, lang] => (*a, None, *label, *lang, None),
            [a, b, label, lang] => (*a, Some(*b), *label, *lang, None),
            [a, b, label, lang, valid] => {
                let valid = match *valid {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    other => {
                        return Err(Error::parse(path, line_no, format!("bad validity flag {other:?}")))
                    }
                };
                (*a, Some(*b), *label, *lang, Some(valid))
            }
            _ => {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("expected 3 to 5 tab-separated columns, found {}", cols.len()),
                ))
            }
        };
        let language =
            LanguageTag::new(language).map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        out.push(ClassificationExample {
            text_a: text_a.to_string(),
            text_b: text_b.filter(|b| !b.is_empty()).map(str::to_string),
            label: label.to_string(),
            language,
            provenance: provenance.to_string(),
            valid,
        });
    }
    Ok(out)
}

pub fn write_classification_tsv(
    path: impl AsRef<Path>,
    examples: &[ClassificationExample],
) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        for field in [&ex.text_a, ex.text_b.as_deref().unwrap_or(""), &ex.label] {
            if field.contains(['\t', '\n']) {
                return Err(Error::InvalidExample(format!(
                    "field {field:?} cannot be written as TSV"
                )));
            }
        }
        let mut line = format!(
            "{}\t{}\t{}\t{}",
            ex.text_a,
            ex.text_b.as_deref().unwrap_or(""),
            ex.label,
            ex.language
        );
        if let Some(valid) = ex.valid {
            line.push_str(if valid { "\ttrue" } else { "\tfalse" });
        }
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
