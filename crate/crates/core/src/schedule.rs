//! One-cycle learning rate: cosine warm-up to the peak, then cosine
//! annealing to `max_lr / (div_factor * final_div_factor)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneCycle {
    pub max_lr: f64,
    pub total_steps: usize,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
}

impl OneCycle {
    pub fn new(max_lr: f64, total_steps: usize) -> Self {
        OneCycle {
            max_lr,
            total_steps,
            pct_start: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::invalid("one-cycle schedule needs at least one step"));
        }
        if !(self.pct_start > 0.0 && self.pct_start < 1.0) {
            return Err(Error::invalid(format!("pct_start {} not in (0, 1)", self.pct_start)));
        }
        if !(self.max_lr > 0.0 && self.div_factor > 0.0 && self.final_div_factor > 0.0) {
            return Err(Error::invalid(
                "max_lr, div_factor and final_div_factor must be positive",
            ));
        }
        Ok(())
    }

    pub fn initial_lr(&self) -> f64 {
        self.max_lr / self.div_factor
    }

    pub fn min_lr(&self) -> f64 {
        self.initial_lr() / self.final_div_factor
    }

    /// Step at which the peak `max_lr` is reached.
    pub fn peak_step(&self) -> usize {
        (self.pct_start * self.total_steps as f64).floor() as usize
    }

    pub fn lr(&self, step: usize) -> Result<f64> {
        self.validate()?;
        if step >= self.total_steps {
            return Err(Error::invalid(format!("step {step} outside [0, {})", self.total_steps)));
        }
        let peak = self.peak_step();
        let last = self.total_steps - 1;
        Ok(if step < peak {
            cosine(self.initial_lr(), self.max_lr, step as f64 / peak as f64)
        } else if last == peak {
            self.max_lr
        } else {
            cosine(self.max_lr, self.min_lr(), (step - peak) as f64 / (last - peak) as f64)
        })
    }
}

fn cosine(start: f64, end: f64, frac: f64) -> f64 {
    end + (start - end) / 2.0 * (1.0 + (std::f64::consts::PI * frac).cos())
}

pub fn one_cycle_lr(step: usize, schedule: &OneCycle) -> Result<f64> {
    schedule.lr(step)
}
