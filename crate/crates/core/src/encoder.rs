//! Post-layernorm transformer encoder over decorated chunk windows.
//!
//! Windows of one batch are stacked row-wise into a `[batch * width, dim]`
//! matrix. Projections act on the whole stack; attention is computed per
//! window and per head, so windows never see each other and PAD keys are
//! masked out of every softmax.

use crate::autograd::{Tape, Var};
use crate::chunking::EncoderWindow;
use crate::error::{Error, Result};
use crate::model::{Bound, EncoderConfig, EncoderVars, LayerVars, ModelState, Representation};
use crate::tensor::{Scalar, Tensor};

/// Ordered chunk vectors, one row of width `4 * dim` per chunk.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkEmbeddings<T> {
    pub vectors: Tensor<T>,
}

impl<T: Scalar> ChunkEmbeddings<T> {
    pub fn count(&self) -> usize {
        self.vectors.dims2().0
    }

    pub fn width(&self) -> usize {
        self.vectors.dims2().1
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.vectors.row(i)
    }
}

/// One encoder layer on stacked windows of equal `width`.
pub fn encoder_layer<T: Scalar>(
    tape: &mut Tape<T>,
    layer: &LayerVars,
    x: Var,
    masks: &[&[bool]],
    n_heads: usize,
    eps: f64,
) -> Result<Var> {
    let (rows, dim) = tape.value(x).dims2();
    let width = rows / masks.len().max(1);
    if masks.is_empty() || width * masks.len() != rows || masks.iter().any(|m| m.len() != width) {
        return Err(Error::shape("encoder_layer", &[rows, dim], &[masks.len(), width]));
    }
    let head = dim / n_heads;
    let inv_sqrt = T::of(1.0 / (head as f64).sqrt());

    let q = tape.matmul(x, layer.wq)?;
    let q = tape.add_bias(q, layer.bq)?;
    // no key bias: it shifts each score row uniformly and cancels in softmax
    let k = tape.matmul(x, layer.wk)?;
    let v = tape.matmul(x, layer.wv)?;
    let v = tape.add_bias(v, layer.bv)?;

    let mut windows = Vec::with_capacity(masks.len());
    for (b, mask) in masks.iter().enumerate() {
        let r0 = b * width;
        let mut heads = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let c0 = h * head;
            let qh = tape.slice(q, r0, width, c0, head)?;
            let kh = tape.slice(k, r0, width, c0, head)?;
            let vh = tape.slice(v, r0, width, c0, head)?;
            let scores = tape.matmul_t(qh, kh)?;
            let scores = tape.scale(scores, inv_sqrt);
            let probs = tape.softmax_rows(scores, Some(mask))?;
            heads.push(tape.matmul(probs, vh)?);
        }
        windows.push(if n_heads == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        });
    }
    let attn = if windows.len() == 1 {
        windows[0]
    } else {
        tape.concat_rows(&windows)?
    };
    let attn = tape.matmul(attn, layer.wo)?;
    let attn = tape.add_bias(attn, layer.bo)?;
    let h = tape.add(x, attn)?;
    let h = tape.layer_norm(h, layer.ln1_gain, layer.ln1_bias, eps)?;

    let ff = tape.matmul(h, layer.w1)?;
    let ff = tape.add_bias(ff, layer.b1)?;
    let ff = tape.gelu(ff);
    let ff = tape.matmul(ff, layer.w2)?;
    let ff = tape.add_bias(ff, layer.b2)?;
    let out = tape.add(h, ff)?;
    tape.layer_norm(out, layer.ln2_gain, layer.ln2_bias, eps)
}

/// Hidden states after every layer for a batch of equal-width windows.
pub fn encode_layers<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &EncoderVars,
    cfg: &EncoderConfig,
    windows: &[EncoderWindow],
) -> Result<Vec<Var>> {
    let first = windows.first().ok_or(Error::Empty("encoder batch"))?;
    let width = first.width();
    if width > cfg.max_window {
        return Err(Error::invalid(format!(
            "window width {width} exceeds encoder max_window {}",
            cfg.max_window
        )));
    }
    if windows.iter().any(|w| w.width() != width) {
        return Err(Error::invalid("all windows in a batch must share one width"));
    }
    let ids: Vec<usize> = windows.iter().flat_map(|w| w.ids.iter().map(|&t| t as usize)).collect();
    let positions: Vec<usize> = (0..windows.len()).flat_map(|_| 0..width).collect();
    let tok = tape.embedding(vars.token, &ids)?;
    let pos = tape.embedding(vars.position, &positions)?;
    let x = tape.add(tok, pos)?;
    let mut x = tape.layer_norm(x, vars.ln_gain, vars.ln_bias, cfg.layer_norm_eps)?;

    let masks: Vec<&[bool]> = windows.iter().map(|w| w.mask.as_slice()).collect();
    let mut states = Vec::with_capacity(vars.layers.len());
    for layer in &vars.layers {
        x = encoder_layer(tape, layer, x, &masks, cfg.n_heads, cfg.layer_norm_eps)?;
        states.push(x);
    }
    Ok(states)
}

/// Concatenates, 4th-from-last layer first, the representation of each
/// window from the last four layers. Returns `[batch, 4 * dim]`.
pub fn extract_representation_vars<T: Scalar>(
    tape: &mut Tape<T>,
    layer_states: &[Var],
    masks: &[&[bool]],
    mode: Representation,
) -> Result<Var> {
    if layer_states.len() < 4 {
        return Err(Error::invalid(format!(
            "need hidden states of at least 4 layers, got {}",
            layer_states.len()
        )));
    }
    let last4 = &layer_states[layer_states.len() - 4..];
    let width = masks.first().ok_or(Error::Empty("masks"))?.len();
    let mut rows = Vec::with_capacity(masks.len());
    for (b, mask) in masks.iter().enumerate() {
        let mut parts = Vec::with_capacity(4);
        for &state in last4 {
            let part = match mode {
                Representation::Cls => tape.slice_rows(state, b * width, 1)?,
                Representation::MeanOverMask => {
                    let real = mask.iter().filter(|&&m| m).count().max(1);
                    let w = T::of(1.0 / real as f64);
                    let weights: Vec<T> = mask.iter().map(|&m| if m { w } else { T::zero() }).collect();
                    let weights = tape.constant(Tensor::new(vec![1, width], weights)?);
                    let block = tape.slice_rows(state, b * width, width)?;
                    tape.matmul(weights, block)?
                }
            };
            parts.push(part);
        }
        rows.push(tape.concat_cols(&parts)?);
    }
    if rows.len() == 1 {
        Ok(rows[0])
    } else {
        tape.concat_rows(&rows)
    }
}

/// Tensor-level form for a single window: `per_layer[i]` is `[width, dim]`.
pub fn extract_representation<T: Scalar>(
    per_layer: &[Tensor<T>],
    mask: &[bool],
    mode: Representation,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = per_layer.iter().map(|t| tape.constant(t.clone())).collect();
    let out = extract_representation_vars(&mut tape, &vars, &[mask], mode)?;
    let (_, w) = tape.value(out).dims2();
    tape.value(out).clone().reshape(vec![w])
}

pub(crate) fn encode_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    cfg: &EncoderConfig,
    windows: &[EncoderWindow],
) -> Result<Var> {
    let states = encode_layers(tape, &bound.encoder, cfg, windows)?;
    let masks: Vec<&[bool]> = windows.iter().map(|w| w.mask.as_slice()).collect();
    extract_representation_vars(tape, &states, &masks, cfg.representation)
}

/// One encoder pass over up to `max_c` windows.
pub fn encode_batch<T: Scalar>(windows: &[EncoderWindow], state: &ModelState<T>) -> Result<ChunkEmbeddings<T>> {
    let max_c = state.config.max_c;
    if windows.is_empty() || windows.len() > max_c {
        return Err(Error::invalid(format!(
            "encoder batch of {} windows outside [1, {max_c}]",
            windows.len()
        )));
    }
    let mut tape = Tape::new();
    let bound = state.bind(&mut tape);
    let out = encode_on_tape(&mut tape, &bound, &state.config.encoder, windows)?;
    Ok(ChunkEmbeddings {
        vectors: tape.value(out).clone(),
    })
}
