//! Piecewise transliteration of a QA example and recomputation of the answer
//! offset, with the built-in transducers and a lookup table of cached
//! outputs.
//!
//! cargo run --example qa_transliteration

use codeswitch::corpus::{LanguageTag, QaExample};
use codeswitch::translit::{builtin, transliterate_qa_example, LookupTable, WordTransducer};

fn main() -> codeswitch::error::Result<()> {
    let context = "Yeh files ko desk pe rakh do";
    let example = QaExample {
        context: context.into(),
        question: "files kahan rakhein".into(),
        answer_text: "desk".into(),
        answer_start: context.find("desk").expect("answer in context"),
        language: LanguageTag::new("hi")?,
    };
    let table = LookupTable::from_pairs([("Yeh", "यह"), ("files", "फ़ाइलें"), ("ko", "को"), ("desk", "डेस्क"), ("pe", "पे"), ("rakh", "रख"), ("do", "दो")])?;

    let mut transducers: Vec<(&str, Box<dyn WordTransducer>)> = ["identity", "uppercase", "vowel-doubling"]
        .into_iter()
        .map(|n| (n, builtin(n).expect("built-in transducer")))
        .collect();
    transducers.push(("lookup table", Box::new(table)));
    for (name, t) in &transducers {
        let c = transliterate_qa_example(&example, t.as_ref())?;
        println!("{name:>14}: \"{}\" answer \"{}\" at {} (verified: {})", c.new_context, c.new_answer, c.new_start, c.verified);
    }
    Ok(())
}
