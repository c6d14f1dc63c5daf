//! Per-sequence transformer encoder: embeddings followed by post-norm
//! self-attention and feed-forward blocks.

use ndarray::{s, Array2};

use super::layers::{gelu, gelu_backward, layer_norm, layer_norm_backward, linear, linear_backward, masked_softmax, NormCache};
use super::params::{EncoderLayer, Parameters};
use crate::tokenizer::Encoding;

struct LayerCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// One `[L, L]` matrix per head.
    probs: Vec<Array2<f64>>,
    context: Array2<f64>,
    attention_norm: NormCache,
    mid: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
    ff_norm: NormCache,
}

pub(crate) struct EncoderCache {
    token_ids: Vec<usize>,
    segment_ids: Vec<usize>,
    embedding_norm: NormCache,
    layers: Vec<LayerCache>,
}

impl EncoderCache {
    /// Attention probabilities, indexed by layer then head.
    pub fn attention(&self) -> Vec<Vec<Array2<f64>>> {
        self.layers.iter().map(|l| l.probs.clone()).collect()
    }
}

/// Runs the encoder over one sequence and returns hidden states `[L, d]`.
pub(crate) fn encode(params: &Parameters, heads: usize, enc: &Encoding) -> (Array2<f64>, EncoderCache) {
    let token_ids: Vec<usize> = enc.token_ids.iter().map(|&t| t as usize).collect();
    let segment_ids: Vec<usize> = enc.segment_ids.iter().map(|&s| s as usize).collect();
    let valid: Vec<bool> = enc.attention_mask.iter().map(|&m| m == 1).collect();
    let len = token_ids.len();
    let d = params.embedding_norm.gain.len();

    let mut emb = Array2::zeros((len, d));
    for i in 0..len {
        let mut row = emb.row_mut(i);
        row += &params.token_embedding.row(token_ids[i]);
        row += &params.position_embedding.row(i);
        row += &params.segment_embedding.row(segment_ids[i]);
    }
    let (mut x, embedding_norm) = layer_norm(&emb, &params.embedding_norm);

    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (out, cache) = layer_forward(layer, heads, x, &valid);
        layers.push(cache);
        x = out;
    }
    (
        x,
        EncoderCache {
            token_ids,
            segment_ids,
            embedding_norm,
            layers,
        },
    )
}

fn layer_forward(layer: &EncoderLayer, heads: usize, input: Array2<f64>, valid: &[bool]) -> (Array2<f64>, LayerCache) {
    let (len, d) = input.dim();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = linear(input.view(), &layer.query);
    let k = input.dot(&layer.key);
    let v = linear(input.view(), &layer.value);

    let mut context = Array2::zeros((len, d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        let mut p = Array2::zeros((len, len));
        for i in 0..len {
            let row: Vec<f64> = scores.row(i).to_vec();
            for (j, pj) in masked_softmax(&row, valid).into_iter().enumerate() {
                p[[i, j]] = pj;
            }
        }
        context.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
        probs.push(p);
    }
    let attended = linear(context.view(), &layer.output);
    let (mid, attention_norm) = layer_norm(&(&input + &attended), &layer.attention_norm);

    let ff_pre = linear(mid.view(), &layer.ff_in);
    let ff_act = gelu(&ff_pre);
    let ff_out = linear(ff_act.view(), &layer.ff_out);
    let (out, ff_norm) = layer_norm(&(&mid + &ff_out), &layer.ff_norm);
    (
        out,
        LayerCache {
            input,
            q,
            k,
            v,
            probs,
            context,
            attention_norm,
            mid,
            ff_pre,
            ff_act,
            ff_norm,
        },
    )
}

fn layer_backward(layer: &EncoderLayer, heads: usize, c: &LayerCache, dout: &Array2<f64>, g: &mut EncoderLayer) -> Array2<f64> {
    let d = c.input.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let dsum2 = layer_norm_backward(dout, &layer.ff_norm, &c.ff_norm, &mut g.ff_norm);
    let dact = linear_backward(c.ff_act.view(), &layer.ff_out, &dsum2, &mut g.ff_out);
    let dpre = gelu_backward(&c.ff_pre, &dact);
    let dmid = &dsum2 + &linear_backward(c.mid.view(), &layer.ff_in, &dpre, &mut g.ff_in);

    let dsum1 = layer_norm_backward(&dmid, &layer.attention_norm, &c.attention_norm, &mut g.attention_norm);
    let dcontext = linear_backward(c.context.view(), &layer.output, &dsum1, &mut g.output);

    let mut dq = Array2::zeros(c.q.raw_dim());
    let mut dk = Array2::zeros(c.k.raw_dim());
    let mut dv = Array2::zeros(c.v.raw_dim());
    for (h, p) in c.probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dctx = dcontext.slice(cols);
        dv.slice_mut(cols).assign(&p.t().dot(&dctx));
        let dp = dctx.dot(&c.v.slice(cols).t());
        let mut dscores = dp;
        for i in 0..dscores.nrows() {
            let dot: f64 = p.row(i).dot(&dscores.row(i));
            for j in 0..dscores.ncols() {
                dscores[[i, j]] = p[[i, j]] * (dscores[[i, j]] - dot) * scale;
            }
        }
        dq.slice_mut(cols).assign(&dscores.dot(&c.k.slice(cols)));
        dk.slice_mut(cols).assign(&dscores.t().dot(&c.q.slice(cols)));
    }

    let mut dinput = dsum1;
    dinput += &linear_backward(c.input.view(), &layer.query, &dq, &mut g.query);
    g.key += &c.input.t().dot(&dk);
    dinput += &dk.dot(&layer.key.t());
    dinput += &linear_backward(c.input.view(), &layer.value, &dv, &mut g.value);
    dinput
}

/// Back-propagates `dhidden` through the encoder, accumulating into `grads`.
pub(crate) fn encode_backward(params: &Parameters, heads: usize, cache: &EncoderCache, dhidden: Array2<f64>, grads: &mut Parameters) {
    let mut dx = dhidden;
    for (i, layer) in params.layers.iter().enumerate().rev() {
        dx = layer_backward(layer, heads, &cache.layers[i], &dx, &mut grads.layers[i]);
    }
    let demb = layer_norm_backward(&dx, &params.embedding_norm, &cache.embedding_norm, &mut grads.embedding_norm);
    for (i, row) in demb.rows().into_iter().enumerate() {
        let mut t = grads.token_embedding.row_mut(cache.token_ids[i]);
        t += &row;
        let mut p = grads.position_embedding.row_mut(i);
        p += &row;
        let mut s = grads.segment_embedding.row_mut(cache.segment_ids[i]);
        s += &row;
    }
}
