//! Synthetic corpora with planted class signals, JSONL ingestion and the
//! head-plus-tail truncation used by the fixed-budget baseline.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chunking::{TokenId, TokenizedDocument, Vocabulary};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalPolicy {
    Uniform,
    /// Positions strictly after 90% of the document.
    TailOnly,
    /// Positions within the first 10% of the document.
    HeadOnly,
    /// Positions within the central 10% of the document.
    MiddleOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_docs: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Distinct words, signal words included.
    pub vocab_size: usize,
    /// Signal words reserved for each class.
    pub signals_per_class: usize,
    pub policy: SignalPolicy,
    /// Signal occurrences planted per document (fewer if the region is smaller).
    pub signals_per_doc: usize,
    /// Fraction of class-1 documents.
    pub balance: f64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_docs: 1000,
            min_len: 16,
            max_len: 2048,
            vocab_size: 200,
            signals_per_class: 3,
            policy: SignalPolicy::TailOnly,
            signals_per_doc: 1,
            balance: 0.5,
            valid_fraction: 0.0,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub length: usize,
    pub signal_class: u8,
    /// 1-based token positions of every planted signal word.
    pub positions: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub records: Vec<CorpusRecord>,
    pub manifest: Vec<ManifestEntry>,
    pub vocabulary: Vocabulary,
}

impl SyntheticCorpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &CorpusRecord> {
        self.records.iter().filter(move |r| r.split == Some(split))
    }
}

pub fn signal_word(class: u8, j: usize) -> String {
    if class == 1 {
        format!("pos{j}")
    } else {
        format!("neg{j}")
    }
}

fn filler_word(j: usize) -> String {
    format!("w{j}")
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_docs == 0 {
            return Err(Error::Config("n_docs must be at least 1".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "length range [{}, {}] is empty or starts at 0",
                self.min_len, self.max_len
            )));
        }
        if self.signals_per_class == 0 || self.signals_per_doc == 0 {
            return Err(Error::Config(
                "signals_per_class and signals_per_doc must be at least 1".into(),
            ));
        }
        if self.vocab_size < 2 * self.signals_per_class + 1 {
            return Err(Error::Config(format!(
                "vocab_size {} cannot hold {} signal words per class plus filler",
                self.vocab_size, self.signals_per_class
            )));
        }
        if !(0.0..=1.0).contains(&self.balance) {
            return Err(Error::Config(format!("balance {} not in [0, 1]", self.balance)));
        }
        let held_out = self.valid_fraction + self.test_fraction;
        if self.valid_fraction < 0.0 || self.test_fraction < 0.0 || held_out > 1.0 {
            return Err(Error::Config(
                "split fractions must be non-negative and sum to at most 1".into(),
            ));
        }
        Ok(())
    }

    fn fillers(&self) -> usize {
        self.vocab_size - 2 * self.signals_per_class
    }

    /// Filler words, then class-0 then class-1 signal words.
    pub fn vocabulary(&self) -> Vocabulary {
        let words = (0..self.fillers())
            .map(filler_word)
            .chain((0..self.signals_per_class).map(|j| signal_word(0, j)))
            .chain((0..self.signals_per_class).map(|j| signal_word(1, j)));
        Vocabulary::from_tokens(words)
    }
}

/// 1-based positions eligible under `policy` for a document of length `k`.
pub fn eligible_positions(policy: SignalPolicy, k: usize) -> std::ops::RangeInclusive<usize> {
    let kf = k as f64;
    match policy {
        SignalPolicy::Uniform => 1..=k,
        SignalPolicy::TailOnly => ((0.9 * kf).floor() as usize + 1).min(k)..=k,
        SignalPolicy::HeadOnly => 1..=((0.1 * kf).floor() as usize).max(1),
        SignalPolicy::MiddleOnly => {
            let lo = ((0.45 * kf).floor() as usize + 1).min(k);
            let hi = ((0.55 * kf).ceil() as usize).clamp(lo, k);
            lo..=hi
        }
    }
}

fn log_uniform_length(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    if lo == hi {
        return lo;
    }
    let (a, b) = ((lo as f64).ln(), ((hi + 1) as f64).ln());
    (rng.gen_range(a..b).exp().floor() as usize).clamp(lo, hi)
}

/// Seeded corpus. Labels are stratified so the class-1 count is
/// `round(balance·n_docs)` exactly; each document draws from its own stream.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let n = spec.n_docs;
    let positives = (spec.balance * n as f64).round() as usize;
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < positives)).collect();
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    labels.shuffle(&mut master);

    let n_test = (spec.test_fraction * n as f64).round() as usize;
    let n_valid = ((spec.valid_fraction * n as f64).round() as usize).min(n - n_test);
    let n_train = n - n_test - n_valid;
    let width = n.to_string().len();

    let fillers = spec.fillers();
    let mut records = Vec::with_capacity(n);
    let mut manifest = Vec::with_capacity(n);
    for (i, &label) in labels.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64 + 1);
        let k = log_uniform_length(&mut rng, spec.min_len, spec.max_len);
        let mut words: Vec<String> = (0..k).map(|_| filler_word(rng.gen_range(0..fillers))).collect();
        let region: Vec<usize> = eligible_positions(spec.policy, k).collect();
        let mut positions: Vec<usize> = region
            .choose_multiple(&mut rng, spec.signals_per_doc.min(region.len()))
            .copied()
            .collect();
        positions.sort_unstable();
        for &p in &positions {
            words[p - 1] = signal_word(label, rng.gen_range(0..spec.signals_per_class));
        }
        let id = format!("doc{i:0width$}");
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
        manifest.push(ManifestEntry {
            id: id.clone(),
            length: k,
            signal_class: label,
            positions,
        });
        records.push(CorpusRecord {
            id,
            text: words.join(" "),
            label: Some(label),
            split: Some(split),
        });
    }
    Ok(SyntheticCorpus {
        records,
        manifest,
        vocabulary: spec.vocabulary(),
    })
}

/// Scans for signal words; the class of the first one found, if any.
pub fn oracle_label(text: &str) -> Option<u8> {
    text.split_whitespace().find_map(|w| {
        let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
        if w.strip_prefix("pos").is_some_and(digits) {
            Some(1)
        } else if w.strip_prefix("neg").is_some_and(digits) {
            Some(0)
        } else {
            None
        }
    })
}

pub fn write_jsonl<S: Serialize>(items: &[S], out: &mut impl Write) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_jsonl<S: Serialize>(items: &[S], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_jsonl(items, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<serde_json::Value>,
    text: Option<String>,
    label: Option<i64>,
    split: Option<Split>,
}

pub fn parse_jsonl(text: &str, path: &Path) -> Result<Vec<CorpusRecord>> {
    let mut records = Vec::new();
    let mut bad: Vec<(usize, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                bad.push((line_no, e.to_string()));
                continue;
            }
        };
        let id = match raw.id {
            Some(serde_json::Value::String(s)) => s,
            Some(serde_json::Value::Number(n)) => n.to_string(),
            _ => {
                bad.push((line_no, "missing field 'id'".into()));
                continue;
            }
        };
        let Some(text) = raw.text else {
            bad.push((line_no, "missing field 'text'".into()));
            continue;
        };
        if text.split_whitespace().next().is_none() {
            bad.push((line_no, "empty text".into()));
            continue;
        }
        let label = match raw.label {
            None => None,
            Some(l @ (0 | 1)) => Some(l as u8),
            Some(l) => {
                bad.push((line_no, format!("label {l} not in {{0, 1}}")));
                continue;
            }
        };
        records.push(CorpusRecord {
            id,
            text,
            label,
            split: raw.split,
        });
    }
    if !bad.is_empty() {
        return Err(Error::Malformed {
            path: path.into(),
            lines: bad.iter().map(|b| b.0).collect(),
            reason: bad[0].1.clone(),
        });
    }
    if records.is_empty() {
        return Err(Error::Malformed {
            path: path.into(),
            lines: vec![],
            reason: "no records".into(),
        });
    }
    Ok(records)
}

pub fn load_jsonl(path: &Path) -> Result<Vec<CorpusRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, path)
}

pub fn tokenize_records<'a>(
    records: impl IntoIterator<Item = &'a CorpusRecord>,
    vocab: &Vocabulary,
) -> Result<Vec<TokenizedDocument>> {
    records
        .into_iter()
        .map(|r| crate::chunking::tokenize(r.id.clone(), &r.text, r.label, vocab))
        .collect()
}

/// Keeps the first ⌈budget/2⌉ and last ⌊budget/2⌋ zero-overlap chunks when
/// the document needs more than `budget` of them.
pub fn middle_truncate(doc: &TokenizedDocument, budget: usize, c: usize) -> Result<TokenizedDocument> {
    if budget < 2 {
        return Err(Error::invalid(format!("truncation budget {budget} must be at least 2")));
    }
    if c == 0 {
        return Err(Error::invalid("chunk size must be positive"));
    }
    let n = doc.len().div_ceil(c);
    if n <= budget {
        return Ok(doc.clone());
    }
    let head = budget.div_ceil(2) * c;
    let tail_start = (n - budget / 2) * c;
    let tokens: Vec<TokenId> = doc.tokens[..head]
        .iter()
        .chain(&doc.tokens[tail_start..])
        .copied()
        .collect();
    TokenizedDocument::new(doc.id.clone(), tokens, doc.label)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(policy: SignalPolicy) -> SyntheticSpec {
        SyntheticSpec {
            n_docs: 300,
            min_len: 10,
            max_len: 500,
            policy,
            signals_per_doc: 2,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn policies_respected() {
        for policy in [
            SignalPolicy::TailOnly,
            SignalPolicy::HeadOnly,
            SignalPolicy::MiddleOnly,
            SignalPolicy::Uniform,
        ] {
            let c = generate(&spec(policy)).unwrap();
            for (m, r) in c.manifest.iter().zip(&c.records) {
                assert!(!m.positions.is_empty());
                let k = m.length as f64;
                for &p in &m.positions {
                    match policy {
                        SignalPolicy::TailOnly => assert!(p as f64 > 0.9 * k),
                        SignalPolicy::HeadOnly => assert!(p as f64 <= (0.1 * k).max(1.0)),
                        SignalPolicy::MiddleOnly => assert!(p as f64 > 0.45 * k && p as f64 <= (0.55 * k).ceil()),
                        SignalPolicy::Uniform => assert!(p >= 1 && p <= m.length),
                    }
                    let w = r.text.split_whitespace().nth(p - 1).unwrap();
                    assert_eq!(oracle_label(w), Some(m.signal_class));
                }
            }
        }
    }

    #[test]
    fn oracle_recovers_every_label() {
        let c = generate(&spec(SignalPolicy::Uniform)).unwrap();
        for r in &c.records {
            assert_eq!(oracle_label(&r.text), r.label);
        }
    }

    #[test]
    fn deterministic() {
        let a = generate(&spec(SignalPolicy::TailOnly)).unwrap();
        let b = generate(&spec(SignalPolicy::TailOnly)).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.manifest, b.manifest);
        let other = generate(&SyntheticSpec {
            seed: 1,
            ..spec(SignalPolicy::TailOnly)
        })
        .unwrap();
        assert_ne!(a.records, other.records);
    }

    #[test]
    fn balance_and_lengths() {
        let s = SyntheticSpec {
            n_docs: 2000,
            balance: 0.22,
            min_len: 8,
            max_len: 4000,
            ..SyntheticSpec::default()
        };
        let c = generate(&s).unwrap();
        let pos = c.records.iter().filter(|r| r.label == Some(1)).count() as f64 / 2000.0;
        assert!((pos - 0.22).abs() <= 0.02, "{pos}");
        assert!(c.manifest.iter().all(|m| (8..=4000).contains(&m.length)));
        assert!(c.manifest.iter().any(|m| m.length > 2000));
        assert!(c.manifest.iter().any(|m| m.length < 32));
    }

    #[test]
    fn splits_by_fraction() {
        let s = SyntheticSpec {
            n_docs: 100,
            valid_fraction: 0.1,
            test_fraction: 0.2,
            ..SyntheticSpec::default()
        };
        let c = generate(&s).unwrap();
        assert_eq!(c.split(Split::Train).count(), 70);
        assert_eq!(c.split(Split::Valid).count(), 10);
        assert_eq!(c.split(Split::Test).count(), 20);
    }

    #[test]
    fn tiny_vocab_rejected() {
        let s = SyntheticSpec {
            vocab_size: 6,
            signals_per_class: 3,
            ..SyntheticSpec::default()
        };
        assert!(generate(&s).is_err());
    }

    #[test]
    fn generated_text_tokenizes_without_unknowns() {
        let c = generate(&spec(SignalPolicy::TailOnly)).unwrap();
        let docs = tokenize_records(&c.records, &c.vocabulary).unwrap();
        assert!(docs.iter().all(|d| !d.tokens.contains(&crate::chunking::UNK)));
    }

    #[test]
    fn jsonl_round_trip() {
        let c = generate(&spec(SignalPolicy::HeadOnly)).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&c.records, &mut buf).unwrap();
        let back = parse_jsonl(std::str::from_utf8(&buf).unwrap(), Path::new("c.jsonl")).unwrap();
        assert_eq!(back, c.records);
    }

    #[test]
    fn jsonl_errors_carry_lines() {
        let p = Path::new("c.jsonl");
        let ok = "{\"id\":\"a\",\"text\":\"x y\",\"label\":1}\n{\"id\":\"b\",\"text\":\"y\"}\n{\"id\":3,\"text\":\"z\",\"label\":0}\n";
        assert_eq!(parse_jsonl(ok, p).unwrap().len(), 3);
        let bad = "{\"id\":\"a\",\"text\":\"x\",\"label\":2}\n{\"id\":\"b\"}\n{\"id\":\"c\",\"text\":\"x\"}\n";
        match parse_jsonl(bad, p).unwrap_err() {
            Error::Malformed { lines, .. } => assert_eq!(lines, vec![1, 2]),
            e => panic!("{e}"),
        }
        assert!(parse_jsonl("", p).is_err());
    }

    fn doc(k: usize) -> TokenizedDocument {
        TokenizedDocument::new("d", (0..k as u32).map(|t| t + 4).collect(), Some(1)).unwrap()
    }

    #[test]
    fn truncation_keep_rule() {
        let c = 10;
        let d = doc(15 * c);
        assert_eq!(middle_truncate(&d, 15, c).unwrap(), d);

        let d = doc(20 * c);
        let t = middle_truncate(&d, 15, c).unwrap();
        assert_eq!(t.len(), 15 * c);
        assert_eq!(t.tokens[..8 * c], d.tokens[..8 * c]);
        assert_eq!(t.tokens[8 * c..], d.tokens[13 * c..]);

        // short final chunk is kept whole
        let d = doc(20 * c + 3);
        let t = middle_truncate(&d, 15, c).unwrap();
        assert_eq!(t.tokens.last(), d.tokens.last());
        assert_eq!(t.len(), 14 * c + 3);
        assert!(middle_truncate(&d, 1, c).is_err());
    }

    #[test]
    fn tail_survives_middle_does_not() {
        let c = 8;
        let mk = |policy| SyntheticSpec {
            n_docs: 40,
            min_len: 40 * c,
            max_len: 60 * c,
            policy,
            ..SyntheticSpec::default()
        };
        for (policy, survives) in [(SignalPolicy::TailOnly, true), (SignalPolicy::MiddleOnly, false)] {
            let corpus = generate(&mk(policy)).unwrap();
            let docs = tokenize_records(&corpus.records, &corpus.vocabulary).unwrap();
            for (d, r) in docs.iter().zip(&corpus.records) {
                let t = middle_truncate(d, 15, c).unwrap();
                let text: Vec<&str> = t
                    .tokens
                    .iter()
                    .map(|&id| corpus.vocabulary.token(id).unwrap())
                    .collect();
                let found = oracle_label(&text.join(" ")).is_some();
                assert_eq!(found, survives, "{}", r.id);
            }
        }
    }
}
