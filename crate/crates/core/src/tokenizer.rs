//! A small trainable subword tokenizer with exact token-to-word alignment.
//!
//! Vocabularies are learnt with greedy pair merges (BPE) and applied with
//! greedy longest-match, WordPiece style, so a plain token list is enough to
//! reproduce an encoding. Continuation pieces carry a `##` prefix.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::TaggedSentence;
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;
pub const NUM_SPECIALS: u32 = 5;

pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
pub const CONTINUATION_PREFIX: &str = "##";

/// Pairs seen fewer times than this are never merged.
const MIN_MERGE_FREQUENCY: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    max_piece_chars: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from a full token list; the five specials must come
    /// first, in `SPECIAL_TOKENS` order.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len()
            || tokens.iter().zip(SPECIAL_TOKENS).any(|(t, s)| t != s)
        {
            return Err(Error::InvalidArgument(format!(
                "vocabulary must start with {SPECIAL_TOKENS:?}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        let mut max_piece_chars = 1;
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("bad vocabulary entry {tok:?}")));
            }
            if index.insert(tok.clone(), id as u32).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token {tok:?}")));
            }
            if id >= SPECIAL_TOKENS.len() {
                let chars = tok.trim_start_matches(CONTINUATION_PREFIX).chars().count();
                max_piece_chars = max_piece_chars.max(chars);
            }
        }
        Ok(Self {
            tokens,
            index,
            max_piece_chars,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// One token per line, specials first.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
            .map_err(|e| Error::parse(path, 0, e.to_string()))
    }

    /// Splits one word into subword ids by greedy longest match. Characters
    /// with no matching piece become a single `[UNK]`.
    pub fn tokenize_word(&self, word: &str) -> Vec<u32> {
        let chars: Vec<char> = word.chars().collect();
        let mut ids = Vec::new();
        let mut pos = 0;
        let mut piece = String::new();
        while pos < chars.len() {
            let longest = (pos + self.max_piece_chars).min(chars.len());
            let found = (pos + 1..=longest).rev().find_map(|end| {
                piece.clear();
                if pos > 0 {
                    piece.push_str(CONTINUATION_PREFIX);
                }
                piece.extend(&chars[pos..end]);
                self.id(&piece).map(|id| (id, end))
            });
            match found {
                Some((id, end)) => {
                    ids.push(id);
                    pos = end;
                }
                None => {
                    ids.push(UNK);
                    pos += 1;
                }
            }
        }
        ids
    }

    /// Encodes one or two word sequences as
    /// `[CLS] a [SEP] (b [SEP])? [PAD]*`, truncating the longer segment from
    /// the right until everything fits in `max_len`.
    pub fn encode_words<A, B>(&self, a: &[A], b: Option<&[B]>, max_len: usize) -> Result<Encoding>
    where
        A: AsRef<str>,
        B: AsRef<str>,
    {
        if max_len < 3 {
            return Err(Error::InvalidArgument(format!("max_len {max_len} < 3")));
        }
        let mut seg_a = self.pieces(a);
        let mut seg_b = b.map(|b| self.pieces(b)).unwrap_or_default();

        let budget = max_len - 2 - usize::from(b.is_some());
        while seg_a.len() + seg_b.len() > budget {
            if seg_a.len() > seg_b.len() {
                seg_a.pop();
            } else {
                seg_b.pop();
            }
        }

        let mut enc = Encoding::with_capacity(max_len);
        enc.push(CLS, None, 0);
        for (id, w) in seg_a {
            enc.push(id, Some(w), 0);
        }
        enc.push(SEP, None, 0);
        if b.is_some() {
            for (id, w) in seg_b {
                enc.push(id, Some(w), 1);
            }
            enc.push(SEP, None, 1);
        }
        while enc.len() < max_len {
            enc.token_ids.push(PAD);
            enc.word_index.push(None);
            enc.segment_ids.push(0);
            enc.attention_mask.push(0);
        }
        Ok(enc)
    }

    fn pieces<S: AsRef<str>>(&self, words: &[S]) -> Vec<(u32, usize)> {
        words
            .iter()
            .enumerate()
            .flat_map(|(w, word)| {
                self.tokenize_word(word.as_ref())
                    .into_iter()
                    .map(move |id| (id, w))
            })
            .collect()
    }

    pub fn encode_sentence(&self, sentence: &TaggedSentence, max_len: usize) -> Result<Encoding> {
        let words: Vec<&str> = sentence.surfaces().collect();
        self.encode_words(&words, None::<&[&str]>, max_len)
    }

    /// Whitespace-splits `a` (and `b`) and encodes them.
    pub fn encode_text(&self, a: &str, b: Option<&str>, max_len: usize) -> Result<Encoding> {
        let a: Vec<&str> = a.split_whitespace().collect();
        let b: Option<Vec<&str>> = b.map(|b| b.split_whitespace().collect());
        self.encode_words(&a, b.as_deref(), max_len)
    }

    /// Joins pieces back into space-separated words. `[PAD]`, `[CLS]` and
    /// `[SEP]` are dropped; `[UNK]` and `[MASK]` are rendered literally.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let tok = self.token(id).ok_or(Error::UnknownId(id))?;
            if matches!(id, PAD | CLS | SEP) {
                continue;
            }
            match tok.strip_prefix(CONTINUATION_PREFIX) {
                Some(rest) if id >= NUM_SPECIALS && !out.is_empty() => out.push_str(rest),
                _ => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(tok.strip_prefix(CONTINUATION_PREFIX).unwrap_or(tok));
                }
            }
        }
        Ok(out)
    }
}

/// Token ids plus per-token word alignment, segment ids and attention mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encoding {
    pub token_ids: Vec<u32>,
    pub word_index: Vec<Option<usize>>,
    pub segment_ids: Vec<u8>,
    pub attention_mask: Vec<u8>,
}

impl Encoding {
    fn with_capacity(n: usize) -> Self {
        Self {
            token_ids: Vec::with_capacity(n),
            word_index: Vec::with_capacity(n),
            segment_ids: Vec::with_capacity(n),
            attention_mask: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, id: u32, word: Option<usize>, segment: u8) {
        self.token_ids.push(id);
        self.word_index.push(word);
        self.segment_ids.push(segment);
        self.attention_mask.push(1);
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Number of non-padding positions.
    pub fn active_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }
}

/// Learns a subword vocabulary of at most `target_size` entries from the
/// words of `corpus`.
///
/// The seed is accepted for interface stability; merge ties are broken by
/// the merged string, so training has no random component.
pub fn train_vocabulary(corpus: &[TaggedSentence], target_size: usize, _seed: u64) -> Result<Vocabulary> {
    train_vocabulary_from_words(corpus.iter().flat_map(|s| s.surfaces()), target_size)
}

/// Same as [`train_vocabulary`] over a raw word stream.
pub fn train_vocabulary_from_words<'a>(
    words: impl IntoIterator<Item = &'a str>,
    target_size: usize,
) -> Result<Vocabulary> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for w in words {
        *counts.entry(w).or_default() += 1;
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut words: Vec<(Vec<String>, usize)> = counts
        .iter()
        .map(|(w, &c)| {
            let symbols = w
                .chars()
                .enumerate()
                .map(|(i, ch)| if i == 0 { ch.to_string() } else { format!("{CONTINUATION_PREFIX}{ch}") })
                .collect();
            (symbols, c)
        })
        .collect();

    let chars: BTreeSet<char> = counts.keys().flat_map(|w| w.chars()).collect();
    let floor = SPECIAL_TOKENS.len() + chars.len();
    if target_size < floor {
        return Err(Error::InvalidArgument(format!(
            "target_size {target_size} is below {floor} (specials plus distinct characters)"
        )));
    }

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for ch in &chars {
        tokens.push(ch.to_string());
        seen.insert(ch.to_string());
    }

    // Continuation characters, most frequent first, as far as the budget allows.
    let mut cont: BTreeMap<&str, usize> = BTreeMap::new();
    for (symbols, c) in &words {
        for s in symbols.iter().skip(1) {
            *cont.entry(s.as_str()).or_default() += c;
        }
    }
    let mut cont: Vec<(&str, usize)> = cont.into_iter().collect();
    cont.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    for (sym, _) in cont {
        if tokens.len() >= target_size {
            break;
        }
        tokens.push(sym.to_string());
        seen.insert(sym.to_string());
    }

    while tokens.len() < target_size {
        let Some((left, right, merged)) = best_pair(&words) else {
            break;
        };
        for (symbols, _) in &mut words {
            apply_merge(symbols, &left, &right, &merged);
        }
        if seen.insert(merged.clone()) {
            tokens.push(merged);
        }
    }
    Vocabulary::from_tokens(tokens)
}

fn merge_symbols(left: &str, right: &str) -> String {
    format!("{left}{}", right.trim_start_matches(CONTINUATION_PREFIX))
}

/// Most frequent adjacent pair; ties go to the lexicographically smallest
/// merged surface (continuation marker stripped), then the full merged token.
fn best_pair(words: &[(Vec<String>, usize)]) -> Option<(String, String, String)> {
    let mut pairs: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for (symbols, c) in words {
        for w in symbols.windows(2) {
            *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += c;
        }
    }
    pairs
        .into_iter()
        .filter(|&(_, c)| c >= MIN_MERGE_FREQUENCY)
        .map(|((l, r), c)| {
            let merged = merge_symbols(l, r);
            (c, merged, l, r)
        })
        .min_by(|a, b| {
            b.0.cmp(&a.0)
                .then_with(|| {
                    a.1.trim_start_matches(CONTINUATION_PREFIX)
                        .cmp(b.1.trim_start_matches(CONTINUATION_PREFIX))
                })
                .then_with(|| a.1.cmp(&b.1))
        })
        .map(|(_, merged, l, r)| (l.to_string(), r.to_string(), merged))
}

fn apply_merge(symbols: &mut Vec<String>, left: &str, right: &str, merged: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == left && symbols[i + 1] == right {
            symbols[i] = merged.to_string();
            symbols.remove(i + 1);
        }
        i += 1;
    }
}
