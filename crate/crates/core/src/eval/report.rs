use serde::{Deserialize, Serialize};

use super::bootstrap::{bootstrap_ci, BootstrapConfig, Interval};
use super::buckets::{length_groups, longest_fraction};
use super::dump::DumpRecord;
use super::metrics::{confusion, macro_f1, mcc, ConfusionCounts, Metric};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub documents: usize,
    pub counts: ConfusionCounts,
    pub macro_f1: f64,
    pub mcc: f64,
    /// Share of gold class-1 documents.
    pub positive_rate: f64,
    pub mean_tokens: f64,
    pub macro_f1_ci: Option<Interval>,
    pub mcc_ci: Option<Interval>,
}

pub fn report_for(records: &[&DumpRecord], bootstrap: Option<&BootstrapConfig>) -> Result<EvaluationReport> {
    let preds: Vec<u8> = records.iter().map(|r| r.prediction).collect();
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    let counts = confusion(&preds, &labels)?;
    let (macro_f1_ci, mcc_ci) = match bootstrap {
        Some(cfg) => (
            Some(bootstrap_ci(&preds, &labels, Metric::MacroF1, cfg)?),
            Some(bootstrap_ci(&preds, &labels, Metric::Mcc, cfg)?),
        ),
        None => (None, None),
    };
    let n = records.len() as f64;
    Ok(EvaluationReport {
        documents: records.len(),
        counts,
        macro_f1: macro_f1(&counts)?,
        mcc: mcc(&counts)?,
        positive_rate: counts.positives() as f64 / n,
        mean_tokens: records.iter().map(|r| r.length as f64).sum::<f64>() / n,
        macro_f1_ci,
        mcc_ci,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub fraction: f64,
    pub min_tokens: usize,
    pub report: EvaluationReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub index: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub report: EvaluationReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub bootstrap: Option<BootstrapConfig>,
    /// Longest-document fractions, e.g. 0.1 and 0.01.
    pub slices: Vec<f64>,
    pub buckets: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullReport {
    pub model: String,
    pub overall: EvaluationReport,
    pub slices: Vec<SliceReport>,
    pub buckets: Vec<BucketReport>,
}

pub fn length_buckets(
    records: &[DumpRecord],
    groups: usize,
    bootstrap: Option<&BootstrapConfig>,
) -> Result<Vec<BucketReport>> {
    length_groups(records, groups)?
        .into_iter()
        .enumerate()
        .map(|(index, g)| {
            Ok(BucketReport {
                index,
                min_tokens: g.first().map_or(0, |r| r.length),
                max_tokens: g.last().map_or(0, |r| r.length),
                report: report_for(&g, bootstrap)?,
            })
        })
        .collect()
}

pub fn evaluate(records: &[DumpRecord], opts: &EvalOptions) -> Result<FullReport> {
    let bootstrap = opts.bootstrap.as_ref();
    let all: Vec<&DumpRecord> = records.iter().collect();
    let overall = report_for(&all, bootstrap)?;
    let slices = opts
        .slices
        .iter()
        .map(|&f| {
            let s = longest_fraction(records, f)?;
            Ok(SliceReport {
                fraction: f,
                min_tokens: s.first().map_or(0, |r| r.length),
                report: report_for(&s, bootstrap)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let buckets = match opts.buckets {
        Some(g) => length_buckets(records, g, bootstrap)?,
        None => Vec::new(),
    };
    let model = records.first().map(|r| r.model.clone()).unwrap_or_default();
    Ok(FullReport {
        model,
        overall,
        slices,
        buckets,
    })
}
