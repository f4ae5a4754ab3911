use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest count of non-zero differences that uses the exact null distribution.
pub const EXACT_LIMIT: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub p_value: f64,
    /// Sum of ranks of the positive differences.
    pub w_plus: f64,
    /// Pairs left after dropping zero differences.
    pub n_used: usize,
    pub exact: bool,
}

/// Average ranks (1-based) of `values`, ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

struct SignedRanks {
    ranks: Vec<f64>,
    positive: Vec<bool>,
    abs: Vec<f64>,
}

fn signed_ranks(a: &[f64], b: &[f64]) -> Result<SignedRanks> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let mut abs = Vec::new();
    let mut positive = Vec::new();
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        let d = x - y;
        if !d.is_finite() {
            return Err(Error::invalid(format!("non-finite difference at pair {i}")));
        }
        if d != 0.0 {
            abs.push(d.abs());
            positive.push(d > 0.0);
        }
    }
    let ranks = average_ranks(&abs);
    Ok(SignedRanks { ranks, positive, abs })
}

fn w_plus(s: &SignedRanks) -> f64 {
    s.ranks
        .iter()
        .zip(&s.positive)
        .filter(|(_, &p)| p)
        .map(|(r, _)| r)
        .sum()
}

/// Exact two-sided p: enumerates all 2^m sign assignments through a
/// distribution over doubled (hence integral) rank sums.
fn exact_p(s: &SignedRanks) -> f64 {
    let doubled: Vec<usize> = s.ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0f64; total + 1];
    counts[0] = 1.0;
    for &r in &doubled {
        for v in (r..=total).rev() {
            counts[v] += counts[v - r];
        }
    }
    let all = 2f64.powi(doubled.len() as i32);
    let w = (2.0 * w_plus(s)).round() as usize;
    let upper: f64 = counts[w..].iter().sum::<f64>() / all;
    let lower: f64 = counts[..=w].iter().sum::<f64>() / all;
    (2.0 * upper.min(lower)).min(1.0)
}

/// Normal approximation with tie-corrected variance and continuity correction.
fn normal_p(s: &SignedRanks) -> f64 {
    let m = s.ranks.len() as f64;
    let mean = m * (m + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = s.abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = m * (m + 1.0) * (2.0 * m + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w_plus(s) - mean).abs() - 0.5).max(0.0) / var.sqrt();
    libm::erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

/// Two-sided signed-rank test on paired samples.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    let s = signed_ranks(a, b)?;
    let m = s.ranks.len();
    if m == 0 {
        return Ok(WilcoxonResult {
            p_value: 1.0,
            w_plus: 0.0,
            n_used: 0,
            exact: true,
        });
    }
    let exact = m <= EXACT_LIMIT;
    let p_value = if exact { exact_p(&s) } else { normal_p(&s) };
    Ok(WilcoxonResult {
        p_value,
        w_plus: w_plus(&s),
        n_used: m,
        exact,
    })
}

/// The normal-approximation p regardless of sample size.
pub fn wilcoxon_normal_p(a: &[f64], b: &[f64]) -> Result<f64> {
    let s = signed_ranks(a, b)?;
    Ok(if s.ranks.is_empty() { 1.0 } else { normal_p(&s) })
}

/// The exact p regardless of sample size; cost grows with m².
pub fn wilcoxon_exact_p(a: &[f64], b: &[f64]) -> Result<f64> {
    let s = signed_ranks(a, b)?;
    Ok(if s.ranks.is_empty() { 1.0 } else { exact_p(&s) })
}

/// Holm step-down; decisions come back in input order.
pub fn holm_correct(pvals: &[f64], alpha: f64) -> Result<Vec<bool>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} not in (0, 1)")));
    }
    if pvals.is_empty() {
        return Err(Error::Empty("p-values"));
    }
    if let Some(p) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("p-value {p} not in [0, 1]")));
    }
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]).then(a.cmp(&b)));
    let mut reject = vec![false; m];
    for (i, &k) in order.iter().enumerate() {
        if pvals[k] <= alpha / (m - i) as f64 {
            reject[k] = true;
        } else {
            break;
        }
    }
    Ok(reject)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_samples() {
        let a = [0.3, 0.5, 0.9];
        let r = wilcoxon_signed_rank(&a, &a).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.n_used, 0);
    }

    #[test]
    fn five_positive_differences() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [0.0; 5];
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert!(r.exact);
        assert!((r.p_value - 0.0625).abs() < 1e-15);
        assert_eq!(r.w_plus, 15.0);
        // antisymmetric
        assert!((wilcoxon_signed_rank(&b, &a).unwrap().p_value - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn exact_with_ties_matches_enumeration() {
        let d = [1.0, 1.0, -2.0, 3.0, 3.0, 3.0, -0.5];
        let zeros = [0.0; 7];
        let s = signed_ranks(&d, &zeros).unwrap();
        let w = w_plus(&s);
        let m = d.len();
        let (mut ge, mut le) = (0u32, 0u32);
        for mask in 0u32..(1 << m) {
            let sum: f64 = (0..m).filter(|i| mask >> i & 1 == 1).map(|i| s.ranks[i]).sum();
            ge += u32::from(sum >= w - 1e-9);
            le += u32::from(sum <= w + 1e-9);
        }
        let expected = (2.0 * f64::from(ge.min(le)) / f64::from(1u32 << m)).min(1.0);
        assert!((wilcoxon_signed_rank(&d, &zeros).unwrap().p_value - expected).abs() < 1e-12);
    }

    #[test]
    fn shifted_sample_is_significant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b: Vec<f64> = (0..30).map(|_| rng.gen::<f64>()).collect();
        let a: Vec<f64> = b.iter().map(|x| x + 5.0 + 0.01 * rng.gen::<f64>()).collect();
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert!(!r.exact);
        assert!(r.p_value < 0.01);
    }

    #[test]
    fn exact_and_normal_agree_in_overlap_regime() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in 15..=20 {
            for _ in 0..50 {
                let shift = rng.gen_range(-0.5..0.5);
                let a: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() - 0.5 + shift).collect();
                let b = vec![0.0; m];
                let e = wilcoxon_exact_p(&a, &b).unwrap();
                let n = wilcoxon_normal_p(&a, &b).unwrap();
                assert!((e - n).abs() < 0.02, "m={m} exact {e} normal {n}");
            }
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(wilcoxon_signed_rank(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn holm_examples() {
        assert_eq!(
            holm_correct(&[0.01, 0.04, 0.03], 0.05).unwrap(),
            vec![true, false, false]
        );
        assert_eq!(holm_correct(&[1.0, 1.0, 1.0], 0.05).unwrap(), vec![false; 3]);
        assert_eq!(holm_correct(&[0.04], 0.05).unwrap(), vec![true]);
        assert!(holm_correct(&[0.04], 0.0).is_err());
        assert!(holm_correct(&[0.04], 1.0).is_err());
        assert!(holm_correct(&[], 0.05).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    proptest! {
        #[test]
        fn holm_rejects_a_prefix_monotone_in_alpha(
            p in proptest::collection::vec(0.0f64..=1.0, 1..12),
            a1 in 0.001f64..0.5,
            a2 in 0.001f64..0.5,
        ) {
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            let r = holm_correct(&p, lo).unwrap();
            let mut order: Vec<usize> = (0..p.len()).collect();
            order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
            let seq: Vec<bool> = order.iter().map(|&i| r[i]).collect();
            let k = seq.iter().take_while(|&&x| x).count();
            prop_assert!(seq[k..].iter().all(|&x| !x));
            let r_hi = holm_correct(&p, hi).unwrap();
            for i in 0..p.len() {
                prop_assert!(!r[i] || r_hi[i]);
            }
        }

        #[test]
        fn p_in_unit_interval(d in proptest::collection::vec(-5i32..5, 1..40)) {
            let a: Vec<f64> = d.iter().map(|&x| f64::from(x)).collect();
            let b = vec![0.0; a.len()];
            let p = wilcoxon_signed_rank(&a, &b).unwrap().p_value;
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }
}
