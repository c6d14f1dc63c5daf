//! Central finite-difference check of the encoder's analytic gradients for
//! all three heads, on real encodings of generated data.
//!
//! cargo run --release --example gradient_check

use codeswitch::corpus::TaskKind;
use codeswitch::masking::MaskingPolicy;
use codeswitch::model::{decays, gradient_check, Head, ModelConfig, Parameters};
use codeswitch::synth::{code_switched_corpus, qa_examples, sentiment_examples, Lexicon};
use codeswitch::tokenizer::train_vocabulary_from_words;
use codeswitch::trainer::{classification_examples, mlm_examples, qa_examples as span_examples};

fn main() -> codeswitch::error::Result<()> {
    let (en, hi) = (Lexicon::english_like(), Lexicon::hindi_like());
    let both = [&en, &hi];
    let vocab = train_vocabulary_from_words(en.all_words().chain(hi.all_words()), 200)?;
    let config = ModelConfig {
        layers: 2,
        heads: 4,
        d_model: 32,
        d_ff: 64,
        vocab_size: vocab.len(),
        max_len: 16,
        num_labels: 3,
        seed: 1,
    };
    // At the usual 0.02 init scale many gradients sit close to the
    // finite-difference rounding noise; larger weights make the check sharp.
    let mut params = Parameters::init(&config, config.seed);
    for t in params.tensors_mut() {
        if decays(&t.name) {
            t.data.iter_mut().for_each(|x| *x *= 10.0);
        }
    }

    let (mlm, _) = mlm_examples(&code_switched_corpus(&both, 4, 1), &vocab, config.max_len, &MaskingPolicy::switch_boundary(), 1)?;
    let cls = classification_examples(TaskKind::Sa, &sentiment_examples(&both, 3, "cs", 2), &vocab, config.max_len)?;
    let (span, _) = span_examples(&qa_examples(&both, 3, 3), &vocab, config.max_len)?;
    for (head, batch) in [(Head::Mlm, mlm), (Head::Classify, cls), (Head::Span, span)] {
        let r = gradient_check(&config, &params, &batch, head, 1e-5)?;
        println!(
            "{head:?}: max relative error {:.2e} over {} coordinates ({} at noise level {:.1e}), worst {}[{}]",
            r.max_relative_error, r.coordinates, r.below_noise, r.noise_floor, r.worst_tensor, r.worst_index
        );
    }
    Ok(())
}
