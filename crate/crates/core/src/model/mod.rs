//! A small transformer encoder with masked-LM, classification and span
//! heads. Gradients are derived by hand and checked against finite
//! differences.

mod checkpoint;
mod encoder;
mod gradcheck;
pub mod layers;
mod optim;
mod params;

use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TensorRecord};
pub use gradcheck::{relative_error, compare_gradients, gradient_check, GradientCheckReport};
pub use optim::{clip_gradients, learning_rate_at, optimizer_step, OptimizerConfig, OptimizerState, StepStats};
pub use params::{decays, ClassifierHead, EncoderLayer, LayerNorm, Linear, MlmHead, Parameters, SpanHead, TensorMut, TensorRef};

use crate::error::{Error, Result};
use crate::masking::IGNORE_LABEL;
use crate::tokenizer::Encoding;
use layers::{cross_entropy, gelu, gelu_backward, layer_norm, layer_norm_backward, linear, linear_backward};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub num_labels: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            d_model: 64,
            d_ff: 256,
            vocab_size: 1000,
            max_len: 64,
            num_labels: 3,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
            ("num_labels", self.num_labels),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("model {name} must be at least 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::InvalidArgument(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    Mlm,
    Classify,
    Span,
}

/// Supervision for one encoded sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Target {
    /// Per-position token ids, `IGNORE_LABEL` where no prediction is scored.
    Mlm(Vec<i64>),
    Label(usize),
    /// Inclusive token positions.
    Span { start: usize, end: usize },
}

impl Target {
    pub fn head(&self) -> Head {
        match self {
            Target::Mlm(_) => Head::Mlm,
            Target::Label(_) => Head::Classify,
            Target::Span { .. } => Head::Span,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub encoding: Encoding,
    pub target: Target,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Logits {
    /// `[max_len, vocab_size]`
    Mlm(Array2<f64>),
    Classify(Array1<f64>),
    /// Scores at padding positions are not meaningful; they are excluded from
    /// the span softmax.
    Span { start: Array1<f64>, end: Array1<f64> },
}

fn check_params(config: &ModelConfig, params: &Parameters) -> Result<()> {
    config.validate()?;
    let d = config.d_model;
    let ok = params.token_embedding.dim() == (config.vocab_size, d)
        && params.position_embedding.dim() == (config.max_len, d)
        && params.layers.len() == config.layers
        && params.layers.iter().all(|l| l.ff_in.weight.dim() == (d, config.d_ff))
        && params.mlm.decoder.weight.dim() == (d, config.vocab_size);
    if !ok {
        return Err(Error::ShapeMismatch("parameters do not match the model config".into()));
    }
    Ok(())
}

fn check_encoding(config: &ModelConfig, enc: &Encoding) -> Result<()> {
    let n = enc.token_ids.len();
    if n != config.max_len || enc.segment_ids.len() != n || enc.attention_mask.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "encoding of length {n} does not match max_len {}",
            config.max_len
        )));
    }
    if let Some(&id) = enc.token_ids.iter().find(|&&t| t as usize >= config.vocab_size) {
        return Err(Error::UnknownId(id));
    }
    if enc.segment_ids.iter().any(|&s| s > 1) || enc.attention_mask.iter().any(|&m| m > 1) {
        return Err(Error::ShapeMismatch("segment ids and attention mask must be 0 or 1".into()));
    }
    if enc.attention_mask[0] != 1 {
        return Err(Error::ShapeMismatch("the first position must be attended".into()));
    }
    Ok(())
}

/// Positions past the last attended one cannot influence any attended
/// position, so training skips them.
fn active_prefix(enc: &Encoding) -> usize {
    enc.attention_mask.iter().rposition(|&m| m == 1).map_or(1, |i| i + 1)
}

fn prefix(enc: &Encoding, len: usize) -> Encoding {
    Encoding {
        token_ids: enc.token_ids[..len].to_vec(),
        word_index: enc.word_index[..len].to_vec(),
        segment_ids: enc.segment_ids[..len].to_vec(),
        attention_mask: enc.attention_mask[..len].to_vec(),
    }
}

fn valid_mask(enc: &Encoding) -> Vec<bool> {
    enc.attention_mask.iter().map(|&m| m == 1).collect()
}

fn ensure_finite(what: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

struct MlmCache {
    pre: Array2<f64>,
    norm: layers::NormCache,
    normed: Array2<f64>,
}

fn mlm_head(params: &Parameters, hidden: &Array2<f64>) -> (Array2<f64>, MlmCache) {
    let h = &params.mlm;
    let pre = linear(hidden.view(), &h.transform);
    let act = gelu(&pre);
    let (normed, norm) = layer_norm(&act, &h.norm);
    let logits = linear(normed.view(), &h.decoder);
    (logits, MlmCache { pre, norm, normed })
}

fn mlm_head_backward(params: &Parameters, hidden: &Array2<f64>, c: &MlmCache, dlogits: &Array2<f64>, g: &mut Parameters) -> Array2<f64> {
    let h = &params.mlm;
    let dnormed = linear_backward(c.normed.view(), &h.decoder, dlogits, &mut g.mlm.decoder);
    let dact = layer_norm_backward(&dnormed, &h.norm, &c.norm, &mut g.mlm.norm);
    let dpre = gelu_backward(&c.pre, &dact);
    linear_backward(hidden.view(), &h.transform, &dpre, &mut g.mlm.transform)
}

fn classifier_head(params: &Parameters, hidden: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let cls = hidden.slice(s![0..1, ..]).to_owned();
    let pooled = linear(cls.view(), &params.classifier.pooler).mapv(f64::tanh);
    let logits = linear(pooled.view(), &params.classifier.output);
    (cls, pooled, logits)
}

/// Logits for each encoding in `batch`.
pub fn forward(config: &ModelConfig, params: &Parameters, batch: &[Encoding], head: Head) -> Result<Vec<Logits>> {
    check_params(config, params)?;
    batch
        .iter()
        .map(|enc| {
            check_encoding(config, enc)?;
            let (hidden, _) = encoder::encode(params, config.heads, enc);
            let logits = match head {
                Head::Mlm => Logits::Mlm(mlm_head(params, &hidden).0),
                Head::Classify => Logits::Classify(classifier_head(params, &hidden).2.row(0).to_owned()),
                Head::Span => {
                    let out = hidden.dot(&params.span.output);
                    Logits::Span {
                        start: out.column(0).to_owned(),
                        end: out.column(1).to_owned(),
                    }
                }
            };
            let values: Vec<f64> = match &logits {
                Logits::Mlm(a) => a.iter().copied().collect(),
                Logits::Classify(a) => a.to_vec(),
                Logits::Span { start, end } => start.iter().chain(end).copied().collect(),
            };
            ensure_finite("logits", values)?;
            Ok(logits)
        })
        .collect()
}

/// Attention probabilities for one encoding, indexed by layer then head.
pub fn attention_probabilities(config: &ModelConfig, params: &Parameters, enc: &Encoding) -> Result<Vec<Vec<Array2<f64>>>> {
    check_params(config, params)?;
    check_encoding(config, enc)?;
    Ok(encoder::encode(params, config.heads, enc).1.attention())
}

/// Mean loss over the batch, without gradients.
pub fn loss(config: &ModelConfig, params: &Parameters, batch: &[TrainingExample], head: Head) -> Result<f64> {
    Ok(run(config, params, batch, head, None)?.0)
}

/// Mean loss over the batch and its gradient with respect to every tensor.
/// Tensors that do not influence `head` receive exact zeros.
pub fn loss_and_gradients(config: &ModelConfig, params: &Parameters, batch: &[TrainingExample], head: Head) -> Result<(f64, Parameters)> {
    let r = backward(config, params, batch, head)?;
    Ok((r.loss, r.gradients))
}

/// Loss, gradients and how many targets the current parameters already
/// predict correctly.
#[derive(Debug, Clone)]
pub struct BatchResult {
    pub loss: f64,
    pub gradients: Parameters,
    /// Correct predictions: masked tokens for MLM, examples for
    /// classification, examples with both span ends right for spans.
    pub correct: usize,
    pub total: usize,
}

/// [`loss_and_gradients`] plus prediction counts on the batch.
pub fn backward(config: &ModelConfig, params: &Parameters, batch: &[TrainingExample], head: Head) -> Result<BatchResult> {
    let mut gradients = params.zeros_like();
    let (loss, correct, total) = run(config, params, batch, head, Some(&mut gradients))?;
    ensure_finite("gradients", [gradients.global_norm()])?;
    Ok(BatchResult {
        loss,
        gradients,
        correct,
        total,
    })
}

fn run(
    config: &ModelConfig,
    params: &Parameters,
    batch: &[TrainingExample],
    head: Head,
    mut grads: Option<&mut Parameters>,
) -> Result<(f64, usize, usize)> {
    check_params(config, params)?;
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    for ex in batch {
        check_encoding(config, &ex.encoding)?;
        check_target(config, params, ex, head)?;
    }
    let denominator = match head {
        Head::Mlm => {
            let n = batch
                .iter()
                .map(|ex| match &ex.target {
                    Target::Mlm(labels) => labels.iter().filter(|&&l| l != IGNORE_LABEL).count(),
                    _ => 0,
                })
                .sum::<usize>();
            if n == 0 {
                return Err(Error::AllTargetsIgnored);
            }
            n as f64
        }
        Head::Classify => batch.len() as f64,
        Head::Span => 2.0 * batch.len() as f64,
    };

    let mut total = 0.0;
    let mut correct = 0;
    let mut scored = 0;
    for ex in batch {
        let len = active_prefix(&ex.encoding);
        let enc = prefix(&ex.encoding, len);
        let (hidden, cache) = encoder::encode(params, config.heads, &enc);
        let mut dhidden = Array2::zeros(hidden.raw_dim());
        match &ex.target {
            Target::Mlm(labels) => {
                let rows: Vec<usize> = (0..len).filter(|&i| labels[i] != IGNORE_LABEL).collect();
                if rows.is_empty() {
                    continue;
                }
                let selected = hidden.select(Axis(0), &rows);
                let (logits, mcache) = mlm_head(params, &selected);
                let all = vec![true; config.vocab_size];
                let mut dlogits = Array2::zeros(logits.raw_dim());
                for (r, &i) in rows.iter().enumerate() {
                    let row = logits.row(r).to_vec();
                    let (l, g) = cross_entropy(&row, &all, labels[i] as usize);
                    total += l;
                    correct += usize::from(argmax(&row) == labels[i] as usize);
                    scored += 1;
                    dlogits.row_mut(r).assign(&Array1::from(g));
                }
                if let Some(g) = grads.as_deref_mut() {
                    dlogits /= denominator;
                    let dsel = mlm_head_backward(params, &selected, &mcache, &dlogits, g);
                    for (r, &i) in rows.iter().enumerate() {
                        dhidden.row_mut(i).assign(&dsel.row(r));
                    }
                }
            }
            Target::Label(label) => {
                let (cls, pooled, logits) = classifier_head(params, &hidden);
                let row = logits.row(0).to_vec();
                let (l, g) = cross_entropy(&row, &vec![true; row.len()], *label);
                total += l;
                correct += usize::from(argmax(&row) == *label);
                scored += 1;
                if let Some(grads) = grads.as_deref_mut() {
                    let dlogits = Array2::from_shape_vec((1, g.len()), g).expect("row shape") / denominator;
                    let dpooled = linear_backward(pooled.view(), &params.classifier.output, &dlogits, &mut grads.classifier.output);
                    let dpre = dpooled * &pooled.mapv(|p| 1.0 - p * p);
                    let dcls = linear_backward(cls.view(), &params.classifier.pooler, &dpre, &mut grads.classifier.pooler);
                    dhidden.row_mut(0).assign(&dcls.row(0));
                }
            }
            Target::Span { start, end } => {
                let out = hidden.dot(&params.span.output);
                let valid = valid_mask(&enc);
                let starts = out.column(0).to_vec();
                let ends = out.column(1).to_vec();
                let (ls, gs) = cross_entropy(&starts, &valid, *start);
                let (le, ge) = cross_entropy(&ends, &valid, *end);
                total += ls + le;
                let hit = best_span(&starts, &ends, &valid, len) == Some((*start, *end));
                correct += usize::from(hit);
                scored += 1;
                if let Some(grads) = grads.as_deref_mut() {
                    let mut dout = Array2::zeros(out.raw_dim());
                    dout.column_mut(0).assign(&Array1::from(gs));
                    dout.column_mut(1).assign(&Array1::from(ge));
                    dout /= denominator;
                    grads.span.output += &hidden.t().dot(&dout);
                    dhidden = dout.dot(&params.span.output.t());
                }
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            encoder::encode_backward(params, config.heads, &cache, dhidden, g);
        }
    }
    let loss = total / denominator;
    ensure_finite("loss", [loss])?;
    Ok((loss, correct, scored))
}

fn check_target(config: &ModelConfig, params: &Parameters, ex: &TrainingExample, head: Head) -> Result<()> {
    if ex.target.head() != head {
        return Err(Error::InvalidExample(format!(
            "{:?} target given to the {:?} head",
            ex.target.head(),
            head
        )));
    }
    let attended = |i: usize| ex.encoding.attention_mask.get(i) == Some(&1);
    match &ex.target {
        Target::Mlm(labels) => {
            if labels.len() != ex.encoding.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} labels for an encoding of length {}",
                    labels.len(),
                    ex.encoding.len()
                )));
            }
            for (i, &l) in labels.iter().enumerate() {
                if l == IGNORE_LABEL {
                    continue;
                }
                if l < 0 || l as usize >= config.vocab_size || !attended(i) {
                    return Err(Error::InvalidExample(format!("MLM label {l} at position {i}")));
                }
            }
        }
        Target::Label(l) => {
            if *l >= params.classifier.num_labels() {
                return Err(Error::InvalidExample(format!(
                    "label {l} out of range for {} classes",
                    params.classifier.num_labels()
                )));
            }
        }
        Target::Span { start, end } => {
            if start > end || !attended(*start) || !attended(*end) {
                return Err(Error::InvalidExample(format!("span {start}..={end} is not inside the attended positions")));
            }
        }
    }
    Ok(())
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Highest-scoring `(start, end)` with `start <= end < start + max_span`,
/// both inside `allowed`.
pub fn best_span(start: &[f64], end: &[f64], allowed: &[bool], max_span: usize) -> Option<(usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    for i in 0..start.len() {
        if !allowed[i] {
            continue;
        }
        for j in i..(i + max_span).min(end.len()) {
            if !allowed[j] {
                continue;
            }
            let score = start[i] + end[j];
            if best.is_none_or(|(b, _, _)| score > b) {
                best = Some((score, i, j));
            }
        }
    }
    best.map(|(_, i, j)| (i, j))
}

#[cfg(test)]
mod tests;
