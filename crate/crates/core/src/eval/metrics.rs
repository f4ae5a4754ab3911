use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary confusion counts with class 1 as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }

    /// Same table with the class labels swapped.
    pub fn swapped(&self) -> Self {
        ConfusionCounts {
            tp: self.tn,
            tn: self.tp,
            fp: self.fn_,
            fn_: self.fp,
        }
    }

    pub fn add(&mut self, pred: u8, label: u8) {
        match (pred, label) {
            (1, 1) => self.tp += 1,
            (0, 0) => self.tn += 1,
            (1, 0) => self.fp += 1,
            _ => self.fn_ += 1,
        }
    }
}

pub fn confusion(predictions: &[u8], labels: &[u8]) -> Result<ConfusionCounts> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch(predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut c = ConfusionCounts::default();
    for (i, (&p, &y)) in predictions.iter().zip(labels).enumerate() {
        if p > 1 || y > 1 {
            return Err(Error::invalid(format!(
                "record {i}: prediction {p} / label {y} not in {{0, 1}}"
            )));
        }
        c.add(p, y);
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// F1 of one class given its own tp/fp/fn. A class that is neither present
/// nor predicted scores 1.
pub(crate) fn class_f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    if tp + fp + fn_ == 0 {
        return 1.0;
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn macro_f1(c: &ConfusionCounts) -> Result<f64> {
    if c.total() == 0 {
        return Err(Error::Empty("evaluation set"));
    }
    let f1_pos = class_f1(c.tp, c.fp, c.fn_);
    let f1_neg = class_f1(c.tn, c.fn_, c.fp);
    Ok((f1_pos + f1_neg) / 2.0)
}

/// Matthews correlation; 0 when any marginal is empty.
pub fn mcc(c: &ConfusionCounts) -> Result<f64> {
    if c.total() == 0 {
        return Err(Error::Empty("evaluation set"));
    }
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((tp * tn - fp * fn_) / denom.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    MacroF1,
    Mcc,
}

impl Metric {
    pub fn compute(self, c: &ConfusionCounts) -> Result<f64> {
        match self {
            Metric::MacroF1 => macro_f1(c),
            Metric::Mcc => mcc(c),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::MacroF1 => "macro-f1",
            Metric::Mcc => "mcc",
        }
    }
}
