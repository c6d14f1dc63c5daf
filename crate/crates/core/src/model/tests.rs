use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tokenizer::{CLS, PAD, SEP};

pub(crate) fn small_config() -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 4,
        d_model: 32,
        d_ff: 64,
        vocab_size: 200,
        max_len: 12,
        num_labels: 3,
        seed: 7,
    }
}

/// `[CLS] a.. [SEP] b.. [SEP] [PAD]..` with `active` non-pad positions.
fn encoding(config: &ModelConfig, active: usize, rng: &mut ChaCha8Rng) -> Encoding {
    let mut enc = Encoding {
        token_ids: vec![PAD; config.max_len],
        word_index: vec![None; config.max_len],
        segment_ids: vec![0; config.max_len],
        attention_mask: vec![0; config.max_len],
    };
    let split = active / 2;
    for i in 0..active {
        enc.token_ids[i] = if i == 0 {
            CLS
        } else if i == split || i == active - 1 {
            SEP
        } else {
            rng.random_range(5..config.vocab_size as u32)
        };
        enc.segment_ids[i] = u8::from(i > split);
        enc.attention_mask[i] = 1;
        if enc.token_ids[i] >= 5 {
            enc.word_index[i] = Some(i);
        }
    }
    enc
}

fn batch(config: &ModelConfig, head: Head, n: usize, seed: u64) -> Vec<TrainingExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let active = 6 + (k * 3) % (config.max_len - 5);
            let encoding = encoding(config, active, &mut rng);
            let target = match head {
                Head::Mlm => {
                    let mut labels = vec![IGNORE_LABEL; config.max_len];
                    for i in 1..active - 1 {
                        if rng.random_bool(0.4) || i == 1 {
                            labels[i] = rng.random_range(0..config.vocab_size as i64);
                        }
                    }
                    Target::Mlm(labels)
                }
                Head::Classify => Target::Label(rng.random_range(0..config.num_labels)),
                Head::Span => {
                    let start = rng.random_range(1..active - 2);
                    Target::Span {
                        start,
                        end: rng.random_range(start..active - 1),
                    }
                }
            };
            TrainingExample { encoding, target }
        })
        .collect()
}

/// Weights ten times the usual init scale keep gradients well above the
/// finite-difference noise floor.
fn sharpened(config: &ModelConfig) -> Parameters {
    let mut p = Parameters::init(config, config.seed);
    for t in p.tensors_mut() {
        if decays(&t.name) {
            for x in t.data.iter_mut() {
                *x *= 10.0;
            }
        }
    }
    p
}

#[test]
fn attention_rows_sum_to_one_over_unmasked_keys() {
    let config = small_config();
    let params = Parameters::init(&config, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let enc = encoding(&config, 7, &mut rng);
    for layer in attention_probabilities(&config, &params, &enc).unwrap() {
        for head in layer {
            for row in head.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-6);
                for j in 7..config.max_len {
                    assert_eq!(row[j], 0.0);
                }
            }
        }
    }
}

#[test]
fn padding_content_does_not_reach_cls() {
    let config = small_config();
    let params = sharpened(&config);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let enc = encoding(&config, 6, &mut rng);
    let mut other = enc.clone();
    for i in 6..config.max_len {
        other.token_ids[i] = 100 + i as u32;
        other.segment_ids[i] = 1;
    }
    let a = forward(&config, &params, &[enc], Head::Classify).unwrap();
    let b = forward(&config, &params, &[other], Head::Classify).unwrap();
    assert_eq!(a, b);
}

#[test]
fn batch_of_one_matches_batch_of_four() {
    let config = small_config();
    let params = sharpened(&config);
    let examples = batch(&config, Head::Classify, 4, 5);
    let encodings: Vec<Encoding> = examples.iter().map(|e| e.encoding.clone()).collect();
    for head in [Head::Mlm, Head::Classify, Head::Span] {
        let all = forward(&config, &params, &encodings, head).unwrap();
        let one = forward(&config, &params, &encodings[2..3], head).unwrap();
        let diff = match (&all[2], &one[0]) {
            (Logits::Mlm(a), Logits::Mlm(b)) => (a - b).iter().fold(0.0f64, |m, x| m.max(x.abs())),
            (Logits::Classify(a), Logits::Classify(b)) => (a - b).iter().fold(0.0f64, |m, x| m.max(x.abs())),
            (Logits::Span { start: a, end: c }, Logits::Span { start: b, end: d }) => {
                (a - b).iter().chain((c - d).iter()).fold(0.0f64, |m, x| m.max(x.abs()))
            }
            _ => panic!("head mismatch"),
        };
        assert!(diff < 1e-10);
    }
}

#[test]
fn uniform_logits_give_log_vocab_loss() {
    let config = small_config();
    let mut params = Parameters::init(&config, 2);
    params.mlm.decoder.weight.fill(0.0);
    params.mlm.decoder.bias.fill(0.0);
    let b = batch(&config, Head::Mlm, 3, 6);
    let l = loss(&config, &params, &b, Head::Mlm).unwrap();
    assert!((l - (config.vocab_size as f64).ln()).abs() < 1e-12);
}

#[test]
fn all_ignored_targets_are_rejected() {
    let config = small_config();
    let params = Parameters::init(&config, 2);
    let mut b = batch(&config, Head::Mlm, 2, 6);
    for ex in &mut b {
        ex.target = Target::Mlm(vec![IGNORE_LABEL; config.max_len]);
    }
    assert!(matches!(loss_and_gradients(&config, &params, &b, Head::Mlm), Err(Error::AllTargetsIgnored)));
}

#[test]
fn loss_falls_as_correct_logit_grows() {
    let config = small_config();
    let mut params = Parameters::init(&config, 2);
    params.mlm.decoder.weight.fill(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let enc = encoding(&config, 6, &mut rng);
    let mut labels = vec![IGNORE_LABEL; config.max_len];
    labels[2] = 42;
    let ex = [TrainingExample {
        encoding: enc,
        target: Target::Mlm(labels),
    }];
    let mut last = f64::INFINITY;
    for scale in [1.0, 10.0, 100.0] {
        params.mlm.decoder.bias.fill(0.0);
        params.mlm.decoder.bias[42] = scale;
        let l = loss(&config, &params, &ex, Head::Mlm).unwrap();
        assert!(l < last);
        last = l;
    }
    assert!(last < 1e-30);
}

#[test]
fn gradients_match_finite_differences_for_every_head() {
    let config = small_config();
    let params = sharpened(&config);
    for head in [Head::Mlm, Head::Classify, Head::Span] {
        let b = batch(&config, head, 3, 11);
        let report = gradient_check(&config, &params, &b, head, 1e-5).unwrap();
        assert!(report.max_relative_error < 1e-4, "{head:?}: {report:?}");
        assert!(report.coordinates > 500);
    }
}

#[test]
fn corrupted_gradient_is_detected() {
    let config = small_config();
    let params = sharpened(&config);
    let b = batch(&config, Head::Span, 2, 12);
    let (_, mut grads) = loss_and_gradients(&config, &params, &b, Head::Span).unwrap();
    grads.span.output[[3, 1]] += 0.1;
    let report = compare_gradients(&config, &params, &b, Head::Span, 1e-5, &grads).unwrap();
    assert!(report.max_relative_error > 1e-2);
    assert_eq!(report.worst_tensor, "heads.span.output.weight");
}

#[test]
fn structurally_zero_gradients_sit_below_the_noise_floor() {
    let config = small_config();
    let params = sharpened(&config);
    let b = batch(&config, Head::Span, 3, 14);
    let (_, mut grads) = loss_and_gradients(&config, &params, &b, Head::Span).unwrap();
    // the last norm bias moves every span logit alike, which the softmax ignores
    let last = config.layers - 1;
    assert!(grads.layers[last].ff_norm.bias.iter().all(|g| g.abs() < 1e-12));
    let report = compare_gradients(&config, &params, &b, Head::Span, 1e-5, &grads).unwrap();
    assert!(report.below_noise > 0);
    assert!(report.max_relative_error < 1e-4, "{report:?}");

    grads.layers[last].ff_norm.bias[0] += 1e-6;
    let report = compare_gradients(&config, &params, &b, Head::Span, 1e-5, &grads).unwrap();
    assert!(report.max_relative_error > 0.5);
    assert_eq!(report.worst_tensor, format!("layers.{last}.ff_norm.bias"));
}

#[test]
fn zero_input_with_symmetric_weights_has_finite_gradients() {
    let config = small_config();
    let mut params = sharpened(&config);
    // token content is zero and identical everywhere; only positions differ
    params.token_embedding.fill(0.0);
    params.segment_embedding.fill(0.0);
    let mut b = batch(&config, Head::Classify, 2, 13);
    for ex in &mut b {
        ex.encoding.token_ids.iter_mut().for_each(|t| *t = PAD);
        ex.encoding.attention_mask.iter_mut().for_each(|m| *m = 1);
        ex.encoding.segment_ids.iter_mut().for_each(|s| *s = 0);
    }
    let (l, grads) = loss_and_gradients(&config, &params, &b, Head::Classify).unwrap();
    assert!(l.is_finite() && grads.is_finite());
    let report = gradient_check(&config, &params, &b, Head::Classify, 1e-5).unwrap();
    assert!(report.max_relative_error.is_finite());
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

#[test]
fn heads_are_isolated() {
    let config = small_config();
    let params = Parameters::init(&config, 4);
    let exclusive = |g: &Parameters, prefix: &str| {
        g.tensors()
            .iter()
            .filter(|t| t.name.starts_with(prefix))
            .all(|t| t.data.iter().all(|&x| x == 0.0))
    };
    let (_, g) = loss_and_gradients(&config, &params, &batch(&config, Head::Classify, 2, 1), Head::Classify).unwrap();
    assert!(exclusive(&g, "heads.mlm.") && exclusive(&g, "heads.span."));
    assert!(!exclusive(&g, "heads.classifier."));
    let (_, g) = loss_and_gradients(&config, &params, &batch(&config, Head::Mlm, 2, 1), Head::Mlm).unwrap();
    assert!(exclusive(&g, "heads.classifier.") && exclusive(&g, "heads.span."));
    let (_, g) = loss_and_gradients(&config, &params, &batch(&config, Head::Span, 2, 1), Head::Span).unwrap();
    assert!(exclusive(&g, "heads.classifier.") && exclusive(&g, "heads.mlm."));
}

#[test]
fn clipping_scales_by_ratio() {
    let config = small_config();
    let mut g = Parameters::zeros(&config);
    g.classifier.output.bias[0] = 3.0;
    g.classifier.output.bias[1] = 4.0;
    let factor = clip_gradients(&mut g, 1.0);
    assert!((factor - 0.2).abs() < 1e-15);
    assert!((g.classifier.output.bias[0] - 0.6).abs() < 1e-15);
    assert!((g.global_norm() - 1.0).abs() < 1e-12);
}

#[test]
fn first_adam_step_moves_by_learning_rate() {
    let config = small_config();
    let mut p = Parameters::zeros(&config);
    let mut g = Parameters::zeros(&config);
    g.classifier.output.bias[0] = 1.0;
    let opt = OptimizerConfig {
        learning_rate: 0.1,
        total_steps: u64::MAX,
        max_grad_norm: 10.0,
        ..OptimizerConfig::default()
    };
    let mut state = OptimizerState::new(&p);
    optimizer_step(&mut state, &mut p, &mut g, &opt, 1).unwrap();
    assert!((p.classifier.output.bias[0] + 0.1).abs() < 1e-9);
    assert_eq!(p.classifier.output.bias[1], 0.0);
}

#[test]
fn schedule_warms_up_then_decays() {
    let opt = OptimizerConfig {
        learning_rate: 1.0,
        warmup_steps: 100,
        total_steps: 300,
        ..OptimizerConfig::default()
    };
    assert_eq!(learning_rate_at(&opt, 50), 0.5);
    assert_eq!(learning_rate_at(&opt, 100), 1.0);
    assert_eq!(learning_rate_at(&opt, 200), 0.5);
    assert_eq!(learning_rate_at(&opt, 300), 0.0);
    assert_eq!(learning_rate_at(&opt, 400), 0.0);
}

#[test]
fn non_finite_gradients_are_rejected() {
    let config = small_config();
    let mut p = Parameters::zeros(&config);
    let mut g = Parameters::zeros(&config);
    g.classifier.output.bias[0] = f64::NAN;
    let mut state = OptimizerState::new(&p);
    let r = optimizer_step(&mut state, &mut p, &mut g, &OptimizerConfig::default(), 1);
    assert!(matches!(r, Err(Error::NonFinite(_))));
}

fn train_steps(config: &ModelConfig, steps: u64) -> (Parameters, OptimizerState) {
    let mut params = Parameters::init(config, config.seed);
    let mut state = OptimizerState::new(&params);
    let opt = OptimizerConfig {
        learning_rate: 1e-3,
        weight_decay: 0.01,
        total_steps: 100,
        ..OptimizerConfig::default()
    };
    for step in 1..=steps {
        let b = batch(config, Head::Classify, 2, step);
        let (_, mut g) = loss_and_gradients(config, &params, &b, Head::Classify).unwrap();
        optimizer_step(&mut state, &mut params, &mut g, &opt, step).unwrap();
    }
    (params, state)
}

#[test]
fn training_is_deterministic() {
    let config = small_config();
    let (a, _) = train_steps(&config, 3);
    let (b, _) = train_steps(&config, 3);
    assert_eq!(a, b);
    assert_ne!(a, Parameters::init(&config, config.seed));
}

#[test]
fn checkpoint_round_trips_bitwise() {
    let config = small_config();
    let (mut params, state) = train_steps(&config, 2);
    params.reset_head(Head::Classify, 5, 9);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    save_checkpoint(&path, &Checkpoint::new(&config, 2, &params, Some(&state), Some("abc"))).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.step, 2);
    assert_eq!(loaded.config_digest.as_deref(), Some("abc"));
    let restored = loaded.parameters().unwrap();
    assert_eq!(restored.classifier.num_labels(), 5);
    for (a, b) in restored.tensors().iter().zip(params.tensors()) {
        assert!(a.data.iter().zip(b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let st = loaded.optimizer_state().unwrap().unwrap();
    assert_eq!(st, state);
}

#[test]
fn mismatched_encoding_is_rejected() {
    let config = small_config();
    let params = Parameters::init(&config, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut enc = encoding(&config, 6, &mut rng);
    enc.token_ids.push(PAD);
    assert!(matches!(forward(&config, &params, &[enc], Head::Mlm), Err(Error::ShapeMismatch(_))));
    let mut enc = encoding(&config, 6, &mut rng);
    enc.token_ids[1] = 500;
    assert!(matches!(forward(&config, &params, &[enc], Head::Mlm), Err(Error::UnknownId(500))));
}

#[test]
fn best_span_respects_order_and_mask() {
    let start = [0.0, 5.0, 1.0, 9.0];
    let end = [0.0, 1.0, 4.0, 0.5];
    assert_eq!(best_span(&start, &end, &[true; 4], 30), Some((3, 3)));
    assert_eq!(best_span(&start, &end, &[true, true, true, false], 30), Some((1, 2)));
    assert_eq!(best_span(&start, &end, &[true, true, true, false], 1), Some((1, 1)));
    assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
}
