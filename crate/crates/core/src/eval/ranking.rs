use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bootstrap::{resample_indices, BootstrapConfig};
use super::dump::DumpRecord;
use super::metrics::{ConfusionCounts, Metric};
use super::stats::{average_ranks, holm_correct, wilcoxon_signed_rank};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub a: usize,
    pub b: usize,
    pub p_value: f64,
    pub rejected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CliqueBar {
    pub members: Vec<usize>,
    pub lo_rank: f64,
    pub hi_rank: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdRanking {
    pub models: Vec<String>,
    /// 1 is best.
    pub average_ranks: Vec<f64>,
    pub pairs: Vec<PairTest>,
    pub cliques: Vec<CliqueBar>,
}

impl CdRanking {
    /// Plot-ready text: one `rank` row per model then one `clique` row per bar.
    pub fn table(&self) -> String {
        let mut out = String::from("kind\tname\trank\tlo\thi\n");
        let mut order: Vec<usize> = (0..self.models.len()).collect();
        order.sort_by(|&a, &b| self.average_ranks[a].total_cmp(&self.average_ranks[b]));
        for i in order {
            out += &format!("rank\t{}\t{:.4}\t\t\n", self.models[i], self.average_ranks[i]);
        }
        for c in &self.cliques {
            let names: Vec<&str> = c.members.iter().map(|&i| self.models[i].as_str()).collect();
            out += &format!("clique\t{}\t\t{:.4}\t{:.4}\n", names.join(","), c.lo_rank, c.hi_rank);
        }
        out
    }
}

fn bron_kerbosch(adj: &[Vec<bool>], r: Vec<usize>, mut p: Vec<usize>, mut x: Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if p.is_empty() && x.is_empty() {
        out.push(r);
        return;
    }
    while let Some(&v) = p.first() {
        let mut r2 = r.clone();
        r2.push(v);
        let p2 = p.iter().copied().filter(|&u| adj[v][u]).collect();
        let x2 = x.iter().copied().filter(|&u| adj[v][u]).collect();
        bron_kerbosch(adj, r2, p2, x2, out);
        p.remove(0);
        x.push(v);
    }
}

/// Average ranks over paired samples plus Wilcoxon-Holm pairwise decisions.
/// `scores[m][s]` is model m on sample s; higher is better.
pub fn cd_ranking(models: &[String], scores: &[Vec<f64>], alpha: f64) -> Result<CdRanking> {
    let k = scores.len();
    if k < 2 {
        return Err(Error::invalid("ranking needs at least two models"));
    }
    if models.len() != k {
        return Err(Error::LengthMismatch(models.len(), k));
    }
    let s = scores[0].len();
    if s < 2 {
        return Err(Error::invalid("ranking needs at least two paired samples"));
    }
    if let Some(row) = scores.iter().find(|r| r.len() != s) {
        return Err(Error::LengthMismatch(row.len(), s));
    }
    let mut avg = vec![0.0; k];
    for j in 0..s {
        let neg: Vec<f64> = scores.iter().map(|r| -r[j]).collect();
        for (m, r) in average_ranks(&neg).into_iter().enumerate() {
            avg[m] += r;
        }
    }
    avg.iter_mut().for_each(|a| *a /= s as f64);
    let mut pairs = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            let p = wilcoxon_signed_rank(&scores[a], &scores[b])?.p_value;
            pairs.push(PairTest {
                a,
                b,
                p_value: p,
                rejected: false,
            });
        }
    }
    let pvals: Vec<f64> = pairs.iter().map(|p| p.p_value).collect();
    for (pair, rej) in pairs.iter_mut().zip(holm_correct(&pvals, alpha)?) {
        pair.rejected = rej;
    }
    let mut adj = vec![vec![false; k]; k];
    for p in &pairs {
        adj[p.a][p.b] = !p.rejected;
        adj[p.b][p.a] = !p.rejected;
    }
    let mut found = Vec::new();
    bron_kerbosch(&adj, vec![], (0..k).collect(), vec![], &mut found);
    let mut cliques: Vec<CliqueBar> = found
        .into_iter()
        .map(|mut members| {
            members.sort_by(|&a, &b| avg[a].total_cmp(&avg[b]).then(a.cmp(&b)));
            let lo_rank = avg[members[0]];
            let hi_rank = avg[*members.last().unwrap()];
            CliqueBar {
                members,
                lo_rank,
                hi_rank,
            }
        })
        .collect();
    cliques.sort_by(|a, b| a.lo_rank.total_cmp(&b.lo_rank).then(a.hi_rank.total_cmp(&b.hi_rank)));
    Ok(CdRanking {
        models: models.to_vec(),
        average_ranks: avg,
        pairs,
        cliques,
    })
}

/// Per-replicate metric values for each dump on shared resample indices.
/// Dumps are aligned by document id and must agree on gold labels.
pub fn paired_bootstrap_scores(
    dumps: &[Vec<DumpRecord>],
    metric: Metric,
    cfg: &BootstrapConfig,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let first = dumps.first().ok_or(Error::Empty("prediction dumps"))?;
    if first.is_empty() {
        return Err(Error::Empty("prediction dump"));
    }
    let mut ids: Vec<&str> = first.iter().map(|r| r.id.as_str()).collect();
    ids.sort_unstable();
    let mut aligned = Vec::with_capacity(dumps.len());
    for d in dumps {
        let by_id: BTreeMap<&str, &DumpRecord> = d.iter().map(|r| (r.id.as_str(), r)).collect();
        if by_id.len() != ids.len() || d.len() != ids.len() {
            return Err(Error::invalid(format!(
                "dump for model '{}' has {} records, expected {} distinct ids",
                d.first().map_or("", |r| r.model.as_str()),
                d.len(),
                ids.len()
            )));
        }
        let mut rows = Vec::with_capacity(ids.len());
        for id in &ids {
            let r = by_id
                .get(id)
                .ok_or_else(|| Error::invalid(format!("document '{id}' missing from a dump")))?;
            rows.push(*r);
        }
        aligned.push(rows);
    }
    let labels: Vec<u8> = aligned[0].iter().map(|r| r.label).collect();
    for rows in &aligned[1..] {
        if let Some(r) = rows.iter().zip(&labels).find(|(r, &y)| r.label != y) {
            return Err(Error::invalid(format!(
                "gold label disagrees for document '{}'",
                r.0.id
            )));
        }
    }
    let mut scores = vec![Vec::with_capacity(cfg.replicates); dumps.len()];
    for rep in 0..cfg.replicates {
        let (idx, _, _) = resample_indices(&labels, cfg, rep as u64);
        for (m, rows) in aligned.iter().enumerate() {
            let mut c = ConfusionCounts::default();
            for &i in &idx {
                c.add(rows[i].prediction, labels[i]);
            }
            scores[m].push(metric.compute(&c)?);
        }
    }
    Ok(scores)
}

pub fn compare_dumps(
    dumps: &[Vec<DumpRecord>],
    metric: Metric,
    cfg: &BootstrapConfig,
    alpha: f64,
) -> Result<CdRanking> {
    let models: Vec<String> = dumps
        .iter()
        .enumerate()
        .map(|(i, d)| d.first().map_or_else(|| format!("model{i}"), |r| r.model.clone()))
        .collect();
    let scores = paired_bootstrap_scores(dumps, metric, cfg)?;
    cd_ranking(&models, &scores, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("m{i}")).collect()
    }

    #[test]
    fn identical_models_share_a_clique() {
        let s: Vec<f64> = (0..20).map(|i| f64::from(i) * 0.1).collect();
        let r = cd_ranking(&names(2), &[s.clone(), s], 0.05).unwrap();
        assert_eq!(r.average_ranks, vec![1.5, 1.5]);
        assert_eq!(r.cliques.len(), 1);
        assert_eq!(r.cliques[0].members.len(), 2);
    }

    #[test]
    fn dominant_model_separates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b: Vec<f64> = (0..40).map(|_| rng.gen::<f64>()).collect();
        let a: Vec<f64> = b.iter().map(|x| x + 1.0).collect();
        let r = cd_ranking(&names(2), &[a, b], 0.05).unwrap();
        assert_eq!(r.average_ranks, vec![1.0, 2.0]);
        assert!(r.pairs[0].rejected);
        assert_eq!(r.cliques.len(), 2);
    }

    #[test]
    fn strict_order_gives_integer_ranks() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c: Vec<f64> = (0..30).map(|_| rng.gen::<f64>()).collect();
        let b: Vec<f64> = c.iter().map(|x| x + 0.5).collect();
        let a: Vec<f64> = b.iter().map(|x| x + 0.5).collect();
        let r = cd_ranking(&names(3), &[a, b, c], 0.05).unwrap();
        assert_eq!(r.average_ranks, vec![1.0, 2.0, 3.0]);
        assert!(r.table().contains("rank\tm0\t1.0000"));
    }

    #[test]
    fn overlapping_cliques() {
        // a~b and b~c indistinguishable, a vs c rejected
        let mut adj = vec![vec![false; 3]; 3];
        for (i, j) in [(0, 1), (1, 2)] {
            adj[i][j] = true;
            adj[j][i] = true;
        }
        let mut out = Vec::new();
        bron_kerbosch(&adj, vec![], vec![0, 1, 2], vec![], &mut out);
        out.iter_mut().for_each(|c| c.sort());
        out.sort();
        assert_eq!(out, vec![vec![0, 1], vec![1, 2]]);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(cd_ranking(&names(2), &[vec![1.0], vec![2.0]], 0.05).is_err());
        assert!(cd_ranking(&names(1), &[vec![1.0, 2.0]], 0.05).is_err());
        assert!(cd_ranking(&names(2), &[vec![1.0, 2.0], vec![2.0]], 0.05).is_err());
    }

    fn dump(model: &str, preds: &[u8], labels: &[u8]) -> Vec<DumpRecord> {
        preds
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (&p, &y))| DumpRecord {
                id: format!("d{i}"),
                length: i + 1,
                label: y,
                probability: f64::from(p),
                prediction: p,
                model: model.into(),
            })
            .collect()
    }

    #[test]
    fn identical_dumps_compare_equal() {
        let y: Vec<u8> = (0..40).map(|i| (i % 3 == 0) as u8).collect();
        let p: Vec<u8> = (0..40).map(|i| (i % 4 == 0) as u8).collect();
        let cfg = BootstrapConfig {
            replicates: 200,
            ..BootstrapConfig::default()
        };
        let r = compare_dumps(&[dump("a", &p, &y), dump("b", &p, &y)], Metric::MacroF1, &cfg, 0.05).unwrap();
        assert_eq!(r.average_ranks, vec![1.5, 1.5]);
        assert_eq!(r.cliques.len(), 1);
    }

    #[test]
    fn dumps_must_agree_on_labels() {
        let y = [0, 1, 0, 1];
        let mut other = dump("b", &y, &y);
        other[0].label = 1;
        let cfg = BootstrapConfig {
            replicates: 5,
            ..BootstrapConfig::default()
        };
        assert!(compare_dumps(&[dump("a", &y, &y), other], Metric::Mcc, &cfg, 0.05).is_err());
    }
}
