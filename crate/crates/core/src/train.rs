//! One-epoch fine-tuning of the trainable parameter groups.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::chunking::TokenizedDocument;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::optim::{AdamW, AdamWConfig};
use crate::pipeline::forward_document;
use crate::schedule::OneCycle;
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_lr: f64,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    /// Documents per optimisation step.
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Loss weight of class-1 documents; 1.0 means unweighted.
    pub positive_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_lr: 2e-3,
            pct_start: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
            batch_size: 1,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            positive_weight: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Steps in one epoch over `n_docs` documents.
    pub fn total_steps(&self, n_docs: usize) -> usize {
        n_docs.div_ceil(self.batch_size.max(1))
    }

    pub fn schedule(&self, n_docs: usize) -> OneCycle {
        OneCycle {
            max_lr: self.max_lr,
            total_steps: self.total_steps(n_docs),
            pct_start: self.pct_start,
            div_factor: self.div_factor,
            final_div_factor: self.final_div_factor,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub learning_rates: Vec<f64>,
}

pub fn train<T: Scalar>(
    corpus: &[TokenizedDocument],
    state: &mut ModelState<T>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    train_with_progress(corpus, state, cfg, |_, _| {})
}

/// Exactly one shuffled pass over `corpus`. `progress` sees `(step, loss)`.
pub fn train_with_progress<T: Scalar>(
    corpus: &[TokenizedDocument],
    state: &mut ModelState<T>,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    let unlabeled: Vec<&str> = corpus
        .iter()
        .filter(|d| d.label.is_none())
        .map(|d| d.id.as_str())
        .take(10)
        .collect();
    if !unlabeled.is_empty() {
        return Err(Error::invalid(format!("unlabeled training documents: {unlabeled:?}")));
    }
    let schedule = cfg.schedule(corpus.len());
    schedule.validate()?;

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));

    let mut opt = AdamW::new(
        AdamWConfig {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
        state,
    );
    let mut report = TrainReport::default();
    let inv_batch = |n: usize| T::of(1.0 / n as f64);

    for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
        let lr = schedule.lr(step)?;
        let grads = {
            let mut tape = Tape::new();
            let bound = state.bind(&mut tape);
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let doc = &corpus[i];
                let y = doc.label.expect("checked above");
                let logit = forward_document(&mut tape, &bound, &state.config, doc, None)?;
                let weight = if y == 1 { cfg.positive_weight } else { 1.0 };
                losses.push(tape.bce_with_logits(logit, T::of(f64::from(y)), T::of(weight))?);
            }
            let mut loss = losses[0];
            for &l in &losses[1..] {
                loss = tape.add(loss, l)?;
            }
            let loss = tape.scale(loss, inv_batch(batch.len()));
            let value = tape.value(loss).data()[0].as_f64();
            if !value.is_finite() {
                return Err(Error::invalid(format!("non-finite loss at step {step}")));
            }
            report.losses.push(value);
            report.learning_rates.push(lr);
            progress(step, value);
            let mut g = tape.backward(loss)?;
            bound.all.iter().map(|&v| g.take(v)).collect::<Vec<_>>()
        };
        opt.step(state, &grads, lr)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PipelineConfig;

    fn corpus(n: usize) -> Vec<TokenizedDocument> {
        (0..n)
            .map(|i| {
                let label = (i % 2) as u8;
                let signal = if label == 1 { 5 } else { 6 };
                let mut toks: Vec<u32> = (0..12).map(|j| 7 + ((i * 7 + j * 3) % 10) as u32).collect();
                toks[9] = signal;
                TokenizedDocument::new(format!("d{i}"), toks, Some(label)).unwrap()
            })
            .collect()
    }

    #[test]
    fn frozen_parameters_unchanged() {
        let mut s = ModelState::<f32>::init(PipelineConfig::toy(20, 8, 4, 2)).unwrap();
        let before = s.clone();
        let report = train(&corpus(6), &mut s, &TrainConfig::default()).unwrap();
        assert_eq!(report.losses.len(), 6);
        for (a, b) in s.params.iter().zip(&before.params) {
            if a.trainable {
                assert_ne!(a.value, b.value, "{}", a.name);
            } else {
                let bits = |t: &crate::tensor::Tensor<f32>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(&a.value), bits(&b.value), "{}", a.name);
            }
        }
    }

    #[test]
    fn single_document_single_step() {
        let mut s = ModelState::<f32>::init(PipelineConfig::toy(20, 8, 4, 2)).unwrap();
        let report = train(&corpus(1), &mut s, &TrainConfig::default()).unwrap();
        assert_eq!(report.losses.len(), 1);
    }

    #[test]
    fn batches_round_up() {
        let mut s = ModelState::<f32>::init(PipelineConfig::toy(20, 8, 4, 2)).unwrap();
        let cfg = TrainConfig {
            batch_size: 4,
            ..TrainConfig::default()
        };
        assert_eq!(train(&corpus(9), &mut s, &cfg).unwrap().losses.len(), 3);
    }

    #[test]
    fn unlabeled_rejected_before_training() {
        let mut s = ModelState::<f32>::init(PipelineConfig::toy(20, 8, 4, 2)).unwrap();
        let before = s.clone();
        let mut docs = corpus(3);
        docs[2].label = None;
        assert!(train(&docs, &mut s, &TrainConfig::default()).is_err());
        assert_eq!(s.params[0].value, before.params[0].value);
        assert_eq!(
            s.param("classifier.w").unwrap().value,
            before.param("classifier.w").unwrap().value
        );
    }

    #[test]
    fn deterministic_given_seed() {
        let run = || {
            let mut s = ModelState::<f32>::init(PipelineConfig::toy(20, 8, 4, 2)).unwrap();
            train(&corpus(5), &mut s, &TrainConfig::default()).unwrap().losses
        };
        assert_eq!(run(), run());
    }
}
