//! Document-level forward pass: chunk, decorate, encode in passes of at most
//! `max_c` windows, run the LSTM over all chunk vectors, classify.
//!
//! Passes are independent; the recurrence runs once over the assembled
//! `[n, 4 * dim]` sequence. Nothing is ever truncated.

use std::time::{Duration, Instant};

use crate::autograd::{logistic, Tape, Var};
use crate::chunking::{chunk_document, decorate, TokenizedDocument};
use crate::encoder::encode_on_tape;
use crate::error::{Error, Result};
use crate::model::{Bound, ModelState, PipelineConfig};
use crate::recurrence::{classifier_logit, pool, run_sequence_vars, Prediction};
use crate::tensor::Scalar;

/// Sizes of the encoder passes for `n` chunks: `ceil(n / max_c)` passes,
/// all full except possibly the last.
pub fn plan_passes(n: usize, max_c: usize) -> Result<Vec<usize>> {
    if n == 0 || max_c == 0 {
        return Err(Error::invalid(format!(
            "plan_passes needs n >= 1 and max_c >= 1, got n={n}, max_c={max_c}"
        )));
    }
    let mut passes = vec![max_c; n / max_c];
    if !n.is_multiple_of(max_c) {
        passes.push(n % max_c);
    }
    Ok(passes)
}

#[derive(Clone, Debug, Default)]
pub struct ForwardTrace {
    pub chunks: usize,
    pub passes: Vec<usize>,
    pub encoder_calls: usize,
    pub encoder_time: Duration,
}

/// Builds the whole document graph on `tape` and returns the logit `[1, 1]`.
pub fn forward_document<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    cfg: &PipelineConfig,
    doc: &TokenizedDocument,
    trace: Option<&mut ForwardTrace>,
) -> Result<Var> {
    let set = chunk_document(doc, cfg.chunk_size, cfg.overlap)?;
    let windows = set
        .chunks
        .iter()
        .map(|c| decorate(c, cfg.chunk_size))
        .collect::<Result<Vec<_>>>()?;
    let passes = plan_passes(windows.len(), cfg.max_c)?;

    let started = Instant::now();
    let mut parts = Vec::with_capacity(passes.len());
    let mut offset = 0;
    for &size in &passes {
        parts.push(encode_on_tape(
            tape,
            bound,
            &cfg.encoder,
            &windows[offset..offset + size],
        )?);
        offset += size;
    }
    let encoder_time = started.elapsed();
    let embeddings = if parts.len() == 1 {
        parts[0]
    } else {
        tape.concat_rows(&parts)?
    };

    if let Some(t) = trace {
        t.chunks = windows.len();
        t.encoder_calls = passes.len();
        t.passes = passes;
        t.encoder_time = encoder_time;
    }

    let seq = run_sequence_vars(tape, bound, &cfg.recurrence, embeddings)?;
    let doc_vec = pool(tape, &seq, cfg.recurrence.pooling)?;
    classifier_logit(tape, bound, doc_vec)
}

pub fn predict_document<T: Scalar>(doc: &TokenizedDocument, state: &ModelState<T>) -> Result<Prediction> {
    predict_document_traced(doc, state).map(|(p, _)| p)
}

pub fn predict_document_traced<T: Scalar>(
    doc: &TokenizedDocument,
    state: &ModelState<T>,
) -> Result<(Prediction, ForwardTrace)> {
    let mut tape = Tape::new();
    let bound = state.bind(&mut tape);
    let mut trace = ForwardTrace::default();
    let z = forward_document(&mut tape, &bound, &state.config, doc, Some(&mut trace))?;
    let p = logistic(tape.value(z).data()[0]).as_f64();
    Ok((Prediction::from_probability(p, state.config.threshold), trace))
}
