use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{ConfusionCounts, Metric};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    /// Redraws allowed per replicate when a resample contains a single gold class.
    pub max_redraws: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 2000,
            level: 0.95,
            seed: 0,
            max_redraws: 100,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::invalid("bootstrap needs at least one replicate"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::invalid(format!("confidence level {} not in (0, 1)", self.level)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    /// Total resamples thrown away because they held one gold class.
    pub redraws: usize,
    /// Replicates that stayed single-class after exhausting `max_redraws`.
    pub unresolved: usize,
}

/// One resample of `labels.len()` document indices. The draw depends only on
/// the seed, the replicate index and the gold labels, so every model scored on
/// the same test set sees the same indices.
pub fn resample_indices(labels: &[u8], cfg: &BootstrapConfig, replicate: u64) -> (Vec<usize>, usize, bool) {
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(replicate);
    let both_present = labels.contains(&0) && labels.contains(&1);
    let mut redraws = 0;
    loop {
        let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let first = labels[idx[0]];
        let mixed = idx.iter().any(|&i| labels[i] != first);
        if mixed || !both_present {
            return (idx, redraws, true);
        }
        if redraws == cfg.max_redraws {
            return (idx, redraws, false);
        }
        redraws += 1;
    }
}

pub(crate) fn check_records(predictions: &[u8], labels: &[u8]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch(predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(Error::Empty("bootstrap records"));
    }
    if predictions.iter().chain(labels).any(|&v| v > 1) {
        return Err(Error::invalid("predictions and labels must be 0 or 1"));
    }
    Ok(())
}

/// Metric value for each replicate, in replicate order, plus redraw totals.
pub fn bootstrap_distribution(
    predictions: &[u8],
    labels: &[u8],
    metric: Metric,
    cfg: &BootstrapConfig,
) -> Result<(Vec<f64>, usize, usize)> {
    check_records(predictions, labels)?;
    cfg.validate()?;
    let mut values = Vec::with_capacity(cfg.replicates);
    let (mut redraws, mut unresolved) = (0, 0);
    for r in 0..cfg.replicates {
        let (idx, extra, ok) = resample_indices(labels, cfg, r as u64);
        redraws += extra;
        unresolved += usize::from(!ok);
        let mut c = ConfusionCounts::default();
        for &i in &idx {
            c.add(predictions[i], labels[i]);
        }
        values.push(metric.compute(&c)?);
    }
    Ok((values, redraws, unresolved))
}

/// Nearest-rank quantile of sorted values.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

pub fn percentile_interval(values: &[f64], level: f64) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    (
        nearest_rank(&sorted, (1.0 - level) / 2.0),
        nearest_rank(&sorted, (1.0 + level) / 2.0),
    )
}

pub fn bootstrap_ci(predictions: &[u8], labels: &[u8], metric: Metric, cfg: &BootstrapConfig) -> Result<Interval> {
    let (values, redraws, unresolved) = bootstrap_distribution(predictions, labels, metric, cfg)?;
    let (lo, hi) = percentile_interval(&values, cfg.level);
    Ok(Interval {
        lo,
        hi,
        redraws,
        unresolved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::metrics::{confusion, macro_f1};

    fn cfg(replicates: usize) -> BootstrapConfig {
        BootstrapConfig {
            replicates,
            ..BootstrapConfig::default()
        }
    }

    #[test]
    fn perfect_predictions_collapse() {
        let y = [0, 1, 1, 0, 1, 0, 0, 0];
        for b in [1, 50] {
            let ci = bootstrap_ci(&y, &y, Metric::MacroF1, &cfg(b)).unwrap();
            assert_eq!((ci.lo, ci.hi), (1.0, 1.0));
        }
    }

    #[test]
    fn single_replicate_is_its_own_interval() {
        let p = [1, 0, 0, 1, 1, 0, 1, 0];
        let y = [1, 0, 1, 1, 0, 0, 1, 1];
        let c = cfg(1);
        let ci = bootstrap_ci(&p, &y, Metric::Mcc, &c).unwrap();
        let (idx, _, _) = resample_indices(&y, &c, 0);
        let ip: Vec<u8> = idx.iter().map(|&i| p[i]).collect();
        let iy: Vec<u8> = idx.iter().map(|&i| y[i]).collect();
        let direct = crate::eval::metrics::mcc(&confusion(&ip, &iy).unwrap()).unwrap();
        assert_eq!(ci.lo, direct);
        assert_eq!(ci.hi, direct);
    }

    #[test]
    fn interval_ordered_and_deterministic() {
        let p: Vec<u8> = (0..60).map(|i| ((i * 7) % 3 == 0) as u8).collect();
        let y: Vec<u8> = (0..60).map(|i| ((i * 5) % 4 == 0) as u8).collect();
        let a = bootstrap_ci(&p, &y, Metric::MacroF1, &cfg(300)).unwrap();
        let b = bootstrap_ci(&p, &y, Metric::MacroF1, &cfg(300)).unwrap();
        assert_eq!(a, b);
        assert!(a.lo <= a.hi);
        let point = macro_f1(&confusion(&p, &y).unwrap()).unwrap();
        assert!(a.lo <= point && point <= a.hi);
    }

    #[test]
    fn replicates_are_independent_of_order() {
        // replicate r draws the same indices whether or not earlier replicates ran
        let y: Vec<u8> = (0..30).map(|i| (i % 3 == 0) as u8).collect();
        let c = cfg(10);
        let (all, _, _) = bootstrap_distribution(&y, &y, Metric::Mcc, &c).unwrap();
        let (idx, _, _) = resample_indices(&y, &c, 7);
        let iy: Vec<u8> = idx.iter().map(|&i| y[i]).collect();
        assert_eq!(
            all[7],
            crate::eval::metrics::mcc(&confusion(&iy, &iy).unwrap()).unwrap()
        );
    }

    #[test]
    fn single_class_resamples_redrawn_and_counted() {
        // one positive among three: single-class resamples are common
        let y = [1, 0, 0];
        let c = cfg(200);
        let ci = bootstrap_ci(&y, &y, Metric::Mcc, &c).unwrap();
        assert!(ci.redraws > 0);
        assert_eq!(ci.unresolved, 0);
        assert_eq!((ci.lo, ci.hi), (1.0, 1.0));

        let capped = BootstrapConfig { max_redraws: 0, ..c };
        let ci = bootstrap_ci(&y, &y, Metric::Mcc, &capped).unwrap();
        assert_eq!(ci.redraws, 0);
        assert!(ci.unresolved > 0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(bootstrap_ci(&[], &[], Metric::Mcc, &cfg(5)).is_err());
        assert!(bootstrap_ci(&[1], &[1, 0], Metric::Mcc, &cfg(5)).is_err());
        assert!(bootstrap_ci(&[1], &[1], Metric::Mcc, &cfg(0)).is_err());
        let bad = BootstrapConfig { level: 1.0, ..cfg(5) };
        assert!(bootstrap_ci(&[1], &[1], Metric::Mcc, &bad).is_err());
    }

    #[test]
    fn nearest_rank_quantiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile_interval(&v, 0.95), (3.0, 98.0));
        assert_eq!(nearest_rank(&[4.0], 0.025), 4.0);
    }
}
