//! Which words switch-boundary masking may corrupt, compared with standard
//! token masking, on a Hindi-English sentence.
//!
//! cargo run --example switch_boundary_masking

use std::collections::BTreeMap;

use codeswitch::corpus::TaggedSentence;
use codeswitch::masking::{boundary_word_indices, make_mlm_example, MaskOutcome, MaskingPolicy};
use codeswitch::tokenizer::train_vocabulary;

fn main() -> codeswitch::error::Result<()> {
    let sentence = TaggedSentence::from_parts(
        &["Yeh", "files", "ko", "desk", "pe", "rakh", "do"],
        &["hi", "en", "hi", "en", "hi", "hi", "hi"],
    )?;
    let boundary = boundary_word_indices(&sentence);
    let marked: Vec<String> = sentence
        .surfaces()
        .enumerate()
        .map(|(i, w)| if boundary.contains(&i) { format!("[{w}]") } else { w.to_string() })
        .collect();
    println!("boundary words: {}", marked.join(" "));

    let vocab = train_vocabulary(std::slice::from_ref(&sentence), 40, 0)?;
    let enc = vocab.encode_sentence(&sentence, 24)?;
    let words: Vec<&str> = sentence.surfaces().collect();
    for (name, policy) in [("standard", MaskingPolicy::standard()), ("switch-boundary", MaskingPolicy::switch_boundary())] {
        let mut hits: BTreeMap<&str, usize> = BTreeMap::new();
        for seed in 0..2000 {
            if let MaskOutcome::Masked(ex) = make_mlm_example(&enc, &sentence, &policy, vocab.len(), seed)? {
                for p in ex.selected {
                    *hits.entry(words[enc.word_index[p].expect("selected tokens belong to words")]).or_default() += 1;
                }
            }
        }
        println!("{name:>16}: selections per word over 2000 seeds {hits:?}");
    }

    let mono = TaggedSentence::from_parts(&["rakh", "do"], &["hi", "hi"])?;
    let enc = vocab.encode_sentence(&mono, 24)?;
    let outcome = make_mlm_example(&enc, &mono, &MaskingPolicy::switch_boundary(), vocab.len(), 0)?;
    println!("monolingual sentence under switch-boundary masking: {outcome:?}");
    Ok(())
}
