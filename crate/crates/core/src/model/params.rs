use ndarray::{Array, Array1, Array2, Dimension};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Head, ModelConfig};
use crate::mixer::stream_rng;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[in, out]`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

impl LayerNorm {
    fn zeros(dim: usize) -> Self {
        Self {
            gain: Array1::zeros(dim),
            bias: Array1::zeros(dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub query: Linear,
    /// Keys carry no bias: a key bias only shifts every score of a query
    /// row by the same amount, which the softmax cancels.
    pub key: Array2<f64>,
    pub value: Linear,
    pub output: Linear,
    pub attention_norm: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub ff_norm: LayerNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlmHead {
    pub transform: Linear,
    pub norm: LayerNorm,
    pub decoder: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub pooler: Linear,
    pub output: Linear,
}

impl ClassifierHead {
    pub fn num_labels(&self) -> usize {
        self.output.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanHead {
    /// `[d_model, 2]`: column 0 scores answer starts, column 1 answer ends.
    /// There is no bias; a per-column constant cancels in the span softmax.
    pub output: Array2<f64>,
}

/// Every trainable tensor of the encoder and its three task heads.
///
/// Gradients and optimizer moments use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub token_embedding: Array2<f64>,
    pub position_embedding: Array2<f64>,
    pub segment_embedding: Array2<f64>,
    pub embedding_norm: LayerNorm,
    pub layers: Vec<EncoderLayer>,
    pub mlm: MlmHead,
    pub classifier: ClassifierHead,
    pub span: SpanHead,
}

pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct TensorMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

fn push_ref<'a, D: Dimension>(out: &mut Vec<TensorRef<'a>>, name: String, a: &'a Array<f64, D>) {
    out.push(TensorRef {
        name,
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("parameters are contiguous"),
    });
}

fn push_mut<'a, D: Dimension>(out: &mut Vec<TensorMut<'a>>, name: String, a: &'a mut Array<f64, D>) {
    let shape = a.shape().to_vec();
    out.push(TensorMut {
        name,
        shape,
        data: a.as_slice_mut().expect("parameters are contiguous"),
    });
}

// Lists every tensor in a fixed order; `tensors` and `tensors_mut` share it.
macro_rules! list_tensors {
    ($p:expr, $out:ident, $push:ident, $iter:ident, $($r:tt)+) => {{
        $push(&mut $out, "embeddings.token".into(), $($r)+ $p.token_embedding);
        $push(&mut $out, "embeddings.position".into(), $($r)+ $p.position_embedding);
        $push(&mut $out, "embeddings.segment".into(), $($r)+ $p.segment_embedding);
        $push(&mut $out, "embeddings.norm.gain".into(), $($r)+ $p.embedding_norm.gain);
        $push(&mut $out, "embeddings.norm.bias".into(), $($r)+ $p.embedding_norm.bias);
        for (i, l) in $p.layers.$iter().enumerate() {
            let n = |s: &str| format!("layers.{i}.{s}");
            $push(&mut $out, n("attention.query.weight"), $($r)+ l.query.weight);
            $push(&mut $out, n("attention.query.bias"), $($r)+ l.query.bias);
            $push(&mut $out, n("attention.key.weight"), $($r)+ l.key);
            $push(&mut $out, n("attention.value.weight"), $($r)+ l.value.weight);
            $push(&mut $out, n("attention.value.bias"), $($r)+ l.value.bias);
            $push(&mut $out, n("attention.output.weight"), $($r)+ l.output.weight);
            $push(&mut $out, n("attention.output.bias"), $($r)+ l.output.bias);
            $push(&mut $out, n("attention_norm.gain"), $($r)+ l.attention_norm.gain);
            $push(&mut $out, n("attention_norm.bias"), $($r)+ l.attention_norm.bias);
            $push(&mut $out, n("ff.in.weight"), $($r)+ l.ff_in.weight);
            $push(&mut $out, n("ff.in.bias"), $($r)+ l.ff_in.bias);
            $push(&mut $out, n("ff.out.weight"), $($r)+ l.ff_out.weight);
            $push(&mut $out, n("ff.out.bias"), $($r)+ l.ff_out.bias);
            $push(&mut $out, n("ff_norm.gain"), $($r)+ l.ff_norm.gain);
            $push(&mut $out, n("ff_norm.bias"), $($r)+ l.ff_norm.bias);
        }
        $push(&mut $out, "heads.mlm.transform.weight".into(), $($r)+ $p.mlm.transform.weight);
        $push(&mut $out, "heads.mlm.transform.bias".into(), $($r)+ $p.mlm.transform.bias);
        $push(&mut $out, "heads.mlm.norm.gain".into(), $($r)+ $p.mlm.norm.gain);
        $push(&mut $out, "heads.mlm.norm.bias".into(), $($r)+ $p.mlm.norm.bias);
        $push(&mut $out, "heads.mlm.decoder.weight".into(), $($r)+ $p.mlm.decoder.weight);
        $push(&mut $out, "heads.mlm.decoder.bias".into(), $($r)+ $p.mlm.decoder.bias);
        $push(&mut $out, "heads.classifier.pooler.weight".into(), $($r)+ $p.classifier.pooler.weight);
        $push(&mut $out, "heads.classifier.pooler.bias".into(), $($r)+ $p.classifier.pooler.bias);
        $push(&mut $out, "heads.classifier.output.weight".into(), $($r)+ $p.classifier.output.weight);
        $push(&mut $out, "heads.classifier.output.bias".into(), $($r)+ $p.classifier.output.bias);
        $push(&mut $out, "heads.span.output.weight".into(), $($r)+ $p.span.output);
    }};
}

impl Parameters {
    /// All-zero tensors shaped for `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        Self {
            token_embedding: Array2::zeros((config.vocab_size, d)),
            position_embedding: Array2::zeros((config.max_len, d)),
            segment_embedding: Array2::zeros((2, d)),
            embedding_norm: LayerNorm::zeros(d),
            layers: (0..config.layers)
                .map(|_| EncoderLayer {
                    query: Linear::zeros(d, d),
                    key: Array2::zeros((d, d)),
                    value: Linear::zeros(d, d),
                    output: Linear::zeros(d, d),
                    attention_norm: LayerNorm::zeros(d),
                    ff_in: Linear::zeros(d, config.d_ff),
                    ff_out: Linear::zeros(config.d_ff, d),
                    ff_norm: LayerNorm::zeros(d),
                })
                .collect(),
            mlm: MlmHead {
                transform: Linear::zeros(d, d),
                norm: LayerNorm::zeros(d),
                decoder: Linear::zeros(d, config.vocab_size),
            },
            classifier: ClassifierHead {
                pooler: Linear::zeros(d, d),
                output: Linear::zeros(d, config.num_labels),
            },
            span: SpanHead {
                output: Array2::zeros((d, 2)),
            },
        }
    }

    /// Truncated-normal weights (σ = 0.02, cut at 2σ), zero biases, unit gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut p = Self::zeros(config);
        let mut rng = stream_rng(seed, 0);
        p.init_matching("", &mut rng);
        p
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.fill(0.0);
        }
        z
    }

    /// Re-initialises one task head. A classifier is rebuilt with
    /// `num_labels` outputs.
    pub fn reset_head(&mut self, head: Head, num_labels: usize, seed: u64) {
        let d = self.embedding_norm.gain.len();
        let prefix = match head {
            Head::Mlm => "heads.mlm.",
            Head::Classify => {
                self.classifier.output = Linear::zeros(d, num_labels);
                "heads.classifier."
            }
            Head::Span => "heads.span.",
        };
        let mut rng = stream_rng(seed, 1);
        self.init_matching(prefix, &mut rng);
    }

    fn init_matching(&mut self, prefix: &str, rng: &mut ChaCha8Rng) {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        for t in self.tensors_mut() {
            if !t.name.starts_with(prefix) {
                continue;
            }
            if t.name.ends_with(".gain") {
                t.data.fill(1.0);
            } else if t.name.ends_with(".bias") {
                t.data.fill(0.0);
            } else {
                for x in t.data.iter_mut() {
                    *x = truncated(&normal, rng);
                }
            }
        }
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        list_tensors!(self, out, push_ref, iter, &);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = Vec::new();
        list_tensors!(self, out, push_mut, iter_mut, &mut);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Parameters) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data.iter_mut().zip(b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for x in t.data.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}

/// Whether weight decay applies to the named tensor (not to biases or
/// normalisation gains).
pub fn decays(name: &str) -> bool {
    !(name.ends_with(".bias") || name.ends_with(".gain"))
}

fn truncated(normal: &Normal<f64>, rng: &mut impl Rng) -> f64 {
    loop {
        let x = normal.sample(rng);
        if x.abs() <= 2.0 * INIT_STD {
            return x;
        }
    }
}
