//! Adam with decoupled weight decay.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

pub struct AdamW<T> {
    cfg: AdamWConfig,
    step: u64,
    // first/second moments, indexed like ModelState::params
    moments: Vec<Option<(Vec<T>, Vec<T>)>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: AdamWConfig, state: &ModelState<T>) -> Self {
        AdamW {
            cfg,
            step: 0,
            moments: state
                .params
                .iter()
                .map(|p| {
                    p.trainable
                        .then(|| (vec![T::zero(); p.value.len()], vec![T::zero(); p.value.len()]))
                })
                .collect(),
        }
    }

    /// Applies one update. `grads[i]` belongs to `state.params[i]`; frozen
    /// parameters are never touched even if a gradient is supplied.
    pub fn step(&mut self, state: &mut ModelState<T>, grads: &[Option<Tensor<T>>], lr: f64) -> Result<()> {
        if grads.len() != state.params.len() {
            return Err(Error::LengthMismatch(grads.len(), state.params.len()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let decay = T::of(1.0 - lr * c.weight_decay);
        let step_size = T::of(lr / bc1);
        let bc2_sqrt = T::of(bc2.sqrt());
        let eps = T::of(c.eps);

        for ((param, grad), slot) in state.params.iter_mut().zip(grads).zip(&mut self.moments) {
            let (Some(g), Some((m, v))) = (grad, slot.as_mut()) else {
                continue;
            };
            if !param.trainable {
                continue;
            }
            if g.shape() != param.value.shape() {
                return Err(Error::shape("adamw", param.value.shape(), g.shape()));
            }
            let w = Arc::make_mut(&mut param.value).data_mut();
            for i in 0..w.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + one_b1 * gi;
                v[i] = b2 * v[i] + one_b2 * gi * gi;
                let denom = v[i].sqrt() / bc2_sqrt + eps;
                w[i] = w[i] * decay - step_size * m[i] / denom;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PipelineConfig;

    fn snapshot(s: &ModelState<f64>) -> Vec<Tensor<f64>> {
        s.params.iter().map(|p| (*p.value).clone()).collect()
    }

    #[test]
    fn only_trainable_parameters_move() {
        let mut s = ModelState::<f64>::init(PipelineConfig::toy(20, 4, 4, 0)).unwrap();
        let before = snapshot(&s);
        let grads: Vec<_> = s
            .params
            .iter()
            .map(|p| Some(Tensor::full(p.value.shape(), 0.5)))
            .collect();
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        opt.step(&mut s, &grads, 1e-2).unwrap();
        for ((p, b), _) in s.params.iter().zip(&before).zip(&grads) {
            if p.trainable {
                assert_ne!(*p.value, *b, "{}", p.name);
            } else {
                assert_eq!(*p.value, *b, "{}", p.name);
            }
        }
    }

    #[test]
    fn update_is_linear_in_lr() {
        let base = ModelState::<f64>::init(PipelineConfig::toy(20, 4, 4, 0)).unwrap();
        let grads: Vec<_> = base
            .params
            .iter()
            .map(|p| Some(Tensor::full(p.value.shape(), -0.3)))
            .collect();
        let delta = |lr: f64| {
            let mut s = base.clone();
            let mut opt = AdamW::new(AdamWConfig::default(), &s);
            opt.step(&mut s, &grads, lr).unwrap();
            let p = s.param("classifier.w").unwrap().value.data()[0];
            p - base.param("classifier.w").unwrap().value.data()[0]
        };
        let (d1, d2) = (delta(1e-3), delta(2e-3));
        assert!((d2 / d1 - 2.0).abs() < 1e-9, "{d1} {d2}");
    }
}
