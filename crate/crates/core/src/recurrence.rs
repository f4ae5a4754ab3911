//! LSTM over the ordered chunk embeddings and the logistic classifier head.

use serde::{Deserialize, Serialize};

use crate::autograd::{logistic, Tape, Var};
use crate::error::{Error, Result};
use crate::model::{Bound, LstmVars, ModelState, Pooling, RecurrenceConfig};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Probability of class 1.
    pub probability: f64,
    pub label: u8,
}

impl Prediction {
    pub fn from_probability(probability: f64, threshold: f64) -> Self {
        Prediction {
            probability,
            label: u8::from(probability >= threshold),
        }
    }
}

/// One LSTM step. `gates_x` is the input projection `x W_ih + b` for this
/// step, `[1, 4H]`, gate order input, forget, candidate, output.
pub fn lstm_cell<T: Scalar>(
    tape: &mut Tape<T>,
    w_hh: Var,
    gates_x: Var,
    h: Option<Var>,
    c: Option<Var>,
) -> Result<(Var, Var)> {
    let (_, four_h) = tape.value(gates_x).dims2();
    let hw = four_h / 4;
    let gates = match h {
        Some(h) => {
            let rec = tape.matmul(h, w_hh)?;
            tape.add(gates_x, rec)?
        }
        None => gates_x,
    };
    let i = tape.slice_cols(gates, 0, hw)?;
    let i = tape.sigmoid(i);
    let f = tape.slice_cols(gates, hw, hw)?;
    let f = tape.sigmoid(f);
    let g = tape.slice_cols(gates, 2 * hw, hw)?;
    let g = tape.tanh(g);
    let o = tape.slice_cols(gates, 3 * hw, hw)?;
    let o = tape.sigmoid(o);

    let ig = tape.mul(i, g)?;
    let c_new = match c {
        Some(c) => {
            let fc = tape.mul(f, c)?;
            tape.add(fc, ig)?
        }
        None => ig,
    };
    let tc = tape.tanh(c_new);
    let h_new = tape.mul(o, tc)?;
    Ok((h_new, c_new))
}

fn run_direction<T: Scalar>(tape: &mut Tape<T>, vars: &LstmVars, xs: Var, reverse: bool) -> Result<Vec<Var>> {
    let (n, _) = tape.value(xs).dims2();
    let proj = tape.matmul(xs, vars.w_ih)?;
    let proj = tape.add_bias(proj, vars.bias)?;
    let mut hs = vec![None; n];
    let (mut h, mut c) = (None, None);
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..n).rev())
    } else {
        Box::new(0..n)
    };
    for t in order {
        let gx = tape.slice_rows(proj, t, 1)?;
        let (h2, c2) = lstm_cell(tape, vars.w_hh, gx, h, c)?;
        hs[t] = Some(h2);
        h = Some(h2);
        c = Some(c2);
    }
    Ok(hs.into_iter().map(|h| h.expect("every step visited")).collect())
}

#[derive(Clone, Debug)]
pub struct SequenceVars {
    /// `[n, H * directions]`, aligned with chunk order.
    pub hidden: Var,
    /// `[1, H * directions]`: the forward direction's last step, and for a
    /// bidirectional cell the backward direction's last step (chunk 1).
    pub final_hidden: Var,
}

pub fn run_sequence_vars<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    cfg: &RecurrenceConfig,
    embeddings: Var,
) -> Result<SequenceVars> {
    let (n, width) = tape.value(embeddings).dims2();
    if n == 0 {
        return Err(Error::Empty("chunk embeddings"));
    }
    if width != cfg.input_width {
        return Err(Error::shape("run_sequence", &[n, width], &[n, cfg.input_width]));
    }
    let fwd = run_direction(tape, &bound.forward, embeddings, false)?;
    let fwd_seq = if n == 1 { fwd[0] } else { tape.concat_rows(&fwd)? };
    let fwd_final = fwd[n - 1];
    match &bound.backward {
        None => Ok(SequenceVars {
            hidden: fwd_seq,
            final_hidden: fwd_final,
        }),
        Some(bvars) => {
            let bwd = run_direction(tape, bvars, embeddings, true)?;
            let bwd_seq = if n == 1 { bwd[0] } else { tape.concat_rows(&bwd)? };
            let hidden = tape.concat_cols(&[fwd_seq, bwd_seq])?;
            let final_hidden = tape.concat_cols(&[fwd_final, bwd[0]])?;
            Ok(SequenceVars { hidden, final_hidden })
        }
    }
}

pub fn pool<T: Scalar>(tape: &mut Tape<T>, seq: &SequenceVars, pooling: Pooling) -> Result<Var> {
    match pooling {
        Pooling::Final => Ok(seq.final_hidden),
        Pooling::Mean => tape.mean_rows(seq.hidden),
        Pooling::Max => tape.max_rows(seq.hidden),
    }
}

/// Affine map of the document vector to a single logit.
pub fn classifier_logit<T: Scalar>(tape: &mut Tape<T>, bound: &Bound, doc: Var) -> Result<Var> {
    let z = tape.matmul(doc, bound.classifier_w)?;
    tape.add_bias(z, bound.classifier_b)
}

/// All hidden states and the final hidden state for a chunk sequence.
pub fn run_sequence<T: Scalar>(embeddings: &Tensor<T>, state: &ModelState<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut tape = Tape::new();
    let bound = state.bind(&mut tape);
    let x = tape.constant(embeddings.clone());
    let seq = run_sequence_vars(&mut tape, &bound, &state.config.recurrence, x)?;
    Ok((tape.value(seq.hidden).clone(), tape.value(seq.final_hidden).clone()))
}

pub fn classify<T: Scalar>(document_vector: &Tensor<T>, state: &ModelState<T>) -> Result<Prediction> {
    let mut tape = Tape::new();
    let bound = state.bind(&mut tape);
    let width = document_vector.len();
    let doc = tape.constant(document_vector.clone().reshape(vec![1, width])?);
    let z = classifier_logit(&mut tape, &bound, doc)?;
    let p = logistic(tape.value(z).data()[0]).as_f64();
    Ok(Prediction::from_probability(p, state.config.threshold))
}
