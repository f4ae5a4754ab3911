//! Central finite-difference verification of tape gradients.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, coordinate)` where the maximum was attained.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences at every coordinate of every input.
///
/// The relative error at a coordinate is
/// `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)`.
pub fn grad_check<F>(f: F, points: &[Tensor<f64>], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if step.is_nan() || step <= 0.0 {
        return Err(Error::invalid(format!("grad_check step must be > 0, got {step}")));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.variable(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite { input: 0, index: 0 });
    }
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(points)
        .map(|(&v, p)| grads.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    drop(tape);

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|p| tape.constant(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut work: Vec<Tensor<f64>> = points.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    for input in 0..points.len() {
        for index in 0..points[input].len() {
            let orig = points[input].data()[index];
            work[input].data_mut()[index] = orig + step;
            let plus = eval(&work)?;
            work[input].data_mut()[index] = orig - step;
            let minus = eval(&work)?;
            work[input].data_mut()[index] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[input].data()[index];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite { input, index });
            }
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
            report.coordinates += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (input, index);
            }
        }
    }
    Ok(report)
}
