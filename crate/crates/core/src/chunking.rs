//! Tokenisation, overlap chunking and encoder-window decoration.
//!
//! A document of `k` tokens is cut into chunks of `c` content tokens. With an
//! overlap of `z` (even), each chunk shares `z / 2` tokens with each
//! neighbour, so consecutive chunks start `c - z / 2` tokens apart. The last
//! chunk is whatever remains and may be shorter than `c`. No token is ever
//! covered by more than two chunks.
//!
//! ```text
//! k = 10, c = 4, z = 2
//! t1 t2 t3 t4
//!          t4 t5 t6 t7
//!                   t7 t8 t9 t10
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const CLS: TokenId = 1;
pub const SEP: TokenId = 2;
pub const UNK: TokenId = 3;

const RESERVED: [&str; 4] = ["[PAD]", "[CLS]", "[SEP]", "[UNK]"];

/// Closed whitespace vocabulary. Ids 0..4 are reserved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(std::iter::empty::<String>())
    }
}

impl Vocabulary {
    /// Reserved tokens first, then `tokens` in order; duplicates are skipped.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary {
            tokens: RESERVED.iter().map(|s| s.to_string()).collect(),
            index: HashMap::new(),
        };
        for tok in tokens {
            let tok: String = tok.into();
            if tok.is_empty() || RESERVED.contains(&tok.as_str()) || vocab.index.contains_key(&tok) {
                continue;
            }
            vocab.index.insert(tok.clone(), vocab.tokens.len() as TokenId);
            vocab.tokens.push(tok);
        }
        vocab
    }

    /// Frequency-ranked vocabulary over normalised text, ties broken lexically.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: Option<usize>) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for w in text.split_whitespace() {
                *counts.entry(w.to_lowercase()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let keep = max_size.map_or(ranked.len(), |m| m.saturating_sub(RESERVED.len()));
        Self::from_tokens(ranked.into_iter().take(keep).map(|(w, _)| w))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Never returns a reserved id other than `UNK`.
    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        let ids: Vec<TokenId> = text.split_whitespace().map(|w| self.id(&w.to_lowercase())).collect();
        if ids.is_empty() {
            return Err(Error::Empty("text"));
        }
        Ok(ids)
    }

    /// One token per line; the line number is the id.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < RESERVED.len() || lines[..RESERVED.len()] != RESERVED {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                lines: vec![1, 2, 3, 4],
                reason: format!("first four lines must be {RESERVED:?}"),
            });
        }
        let mut vocab = Vocabulary::default();
        let mut dupes = Vec::new();
        for (i, line) in lines.iter().enumerate().skip(RESERVED.len()) {
            if line.is_empty() || line.chars().any(char::is_whitespace) || vocab.index.contains_key(*line) {
                dupes.push(i + 1);
                continue;
            }
            vocab.index.insert(line.to_string(), vocab.tokens.len() as TokenId);
            vocab.tokens.push(line.to_string());
        }
        if !dupes.is_empty() {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                lines: dupes,
                reason: "empty, duplicate or whitespace-containing token".into(),
            });
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = self.tokens.join("\n");
        out.push('\n');
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDocument {
    pub id: String,
    pub tokens: Vec<TokenId>,
    pub label: Option<u8>,
}

impl TokenizedDocument {
    pub fn new(id: impl Into<String>, tokens: Vec<TokenId>, label: Option<u8>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Empty("document tokens"));
        }
        if let Some(bad) = tokens.iter().find(|&&t| t < UNK) {
            return Err(Error::invalid(format!("reserved id {bad} inside document")));
        }
        if matches!(label, Some(l) if l > 1) {
            return Err(Error::invalid(format!("label {label:?} not in {{0, 1}}")));
        }
        Ok(TokenizedDocument {
            id: id.into(),
            tokens,
            label,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn tokenize(id: impl Into<String>, text: &str, label: Option<u8>, vocab: &Vocabulary) -> Result<TokenizedDocument> {
    TokenizedDocument::new(id, vocab.tokenize(text)?, label)
}

fn validate(k: usize, c: usize, z: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Chunking("document has no tokens".into()));
    }
    if c < 2 {
        return Err(Error::Chunking(format!("chunk size {c} must be at least 2")));
    }
    if z > c {
        return Err(Error::Chunking(format!("overlap {z} exceeds chunk size {c}")));
    }
    if !z.is_multiple_of(2) {
        return Err(Error::Chunking(format!(
            "overlap {z} must be even: each side shares z/2 tokens"
        )));
    }
    Ok(())
}

/// Overlap accepted from user input: even values pass through, 205 becomes
/// 204 (flagged by the returned `true`), any other odd value is rejected.
pub fn normalize_overlap(z: usize) -> Result<(usize, bool)> {
    match z {
        205 => Ok((204, true)),
        z if z % 2 == 0 => Ok((z, false)),
        z => Err(Error::Chunking(format!(
            "overlap {z} must be even: each side shares z/2 tokens"
        ))),
    }
}

/// Distance between consecutive chunk starts.
pub fn stride(c: usize, z: usize) -> usize {
    c - z / 2
}

pub fn chunk_count(k: usize, c: usize, z: usize) -> Result<usize> {
    validate(k, c, z)?;
    if k <= c {
        return Ok(1);
    }
    Ok((k - c).div_ceil(stride(c, z)) + 1)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkSet {
    pub chunk_size: usize,
    pub overlap: usize,
    /// 1-based start position of each chunk.
    pub starts: Vec<usize>,
    pub chunks: Vec<Vec<TokenId>>,
}

impl ChunkSet {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Tokens shared by each adjacent pair.
    pub fn shared_counts(&self) -> Vec<usize> {
        self.starts
            .windows(2)
            .zip(&self.chunks)
            .map(|(s, prev)| (s[0] + prev.len()).saturating_sub(s[1]))
            .collect()
    }
}

pub fn chunk_document(doc: &TokenizedDocument, c: usize, z: usize) -> Result<ChunkSet> {
    chunk_tokens(&doc.tokens, c, z)
}

pub fn chunk_tokens(tokens: &[TokenId], c: usize, z: usize) -> Result<ChunkSet> {
    let k = tokens.len();
    let n = chunk_count(k, c, z)?;
    let step = stride(c, z);
    let mut starts = Vec::with_capacity(n);
    let mut chunks = Vec::with_capacity(n);
    for i in 0..n {
        let s = i * step;
        let e = (s + c).min(k);
        starts.push(s + 1);
        chunks.push(tokens[s..e].to_vec());
    }
    Ok(ChunkSet {
        chunk_size: c,
        overlap: z,
        starts,
        chunks,
    })
}

/// A fixed-width encoder input: `[CLS] chunk [SEP] [PAD]...`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderWindow {
    pub ids: Vec<TokenId>,
    /// True for real positions, including CLS and SEP.
    pub mask: Vec<bool>,
}

impl EncoderWindow {
    pub fn width(&self) -> usize {
        self.ids.len()
    }

    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn decorate(chunk: &[TokenId], c: usize) -> Result<EncoderWindow> {
    if chunk.len() > c {
        return Err(Error::Chunking(format!(
            "chunk of {} tokens exceeds chunk size {c}",
            chunk.len()
        )));
    }
    decorate_to_width(chunk, c + 2)
}

pub fn decorate_to_width(chunk: &[TokenId], width: usize) -> Result<EncoderWindow> {
    if chunk.is_empty() {
        return Err(Error::Chunking("empty chunk".into()));
    }
    if chunk.len() + 2 > width {
        return Err(Error::Chunking(format!(
            "chunk of {} tokens does not fit a window of width {width}",
            chunk.len()
        )));
    }
    let mut ids = Vec::with_capacity(width);
    ids.push(CLS);
    ids.extend_from_slice(chunk);
    ids.push(SEP);
    let real = ids.len();
    ids.resize(width, PAD);
    let mask = (0..width).map(|i| i < real).collect();
    Ok(EncoderWindow { ids, mask })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(k: usize) -> Vec<TokenId> {
        (0..k as TokenId).map(|i| i + 10).collect()
    }

    #[test]
    fn tokenize_maps_and_normalises() {
        let vocab = Vocabulary::from_tokens(["a", "b"]);
        assert_eq!(vocab.id("a"), 4);
        assert_eq!(vocab.tokenize("a b a").unwrap(), vec![4, 5, 4]);
        assert_eq!(vocab.tokenize("A  \n b").unwrap(), vocab.tokenize("a b").unwrap());
        assert_eq!(vocab.tokenize("a zzz").unwrap(), vec![4, UNK]);
        assert!(vocab.tokenize("  \n\t").is_err());
    }

    #[test]
    fn reserved_strings_never_tokenize_to_reserved_ids() {
        let vocab = Vocabulary::from_tokens(["[CLS]", "x"]);
        assert_eq!(vocab.len(), 5);
        assert_eq!(vocab.tokenize("[CLS] [cls] [PAD]").unwrap(), vec![UNK, UNK, UNK]);
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let vocab = Vocabulary::build(["the cat the dog", "a cat"], None);
        vocab.save(&path).unwrap();
        let back = Vocabulary::load(&path).unwrap();
        assert_eq!(vocab, back);
        assert_eq!(back.token(4), Some("cat"));
        std::fs::write(&path, "a\nb\n").unwrap();
        assert!(Vocabulary::load(&path).is_err());
    }

    #[test]
    fn ten_token_layout() {
        let set = chunk_tokens(&seq(10), 4, 2).unwrap();
        assert_eq!(set.starts, vec![1, 4, 7]);
        assert_eq!(
            set.chunks,
            vec![vec![10, 11, 12, 13], vec![13, 14, 15, 16], vec![16, 17, 18, 19]]
        );
        assert_eq!(set.shared_counts(), vec![1, 1]);
    }

    #[test]
    fn counts() {
        assert_eq!(chunk_count(10, 4, 2).unwrap(), 3);
        assert_eq!(chunk_count(7650, 510, 0).unwrap(), 15);
        assert_eq!(chunk_count(7651, 510, 0).unwrap(), 16);
        assert_eq!(chunk_count(1000, 510, 408).unwrap(), 3);
        let starts = chunk_tokens(&seq(1000), 510, 408).unwrap().starts;
        assert_eq!(starts, vec![1, 307, 613]);
    }

    #[test]
    fn zero_overlap_partitions() {
        let set = chunk_tokens(&seq(10), 4, 0).unwrap();
        assert_eq!(set.chunks.concat(), seq(10));
        assert_eq!(set.chunks[2].len(), 2);
    }

    #[test]
    fn short_document_is_one_chunk() {
        let set = chunk_tokens(&seq(5), 10, 4).unwrap();
        assert_eq!(set.chunks, vec![seq(5)]);
    }

    #[test]
    fn invalid_parameters() {
        assert!(chunk_count(10, 4, 3).is_err());
        assert!(chunk_count(10, 4, 6).is_err());
        assert!(chunk_count(0, 4, 2).is_err());
        assert!(chunk_count(10, 1, 0).is_err());
    }

    #[test]
    fn decorate_layouts() {
        let w = decorate(&seq(510), 510).unwrap();
        assert_eq!(w.width(), 512);
        assert!(w.mask.iter().all(|&m| m));
        assert_eq!((w.ids[0], w.ids[511]), (CLS, SEP));

        let w = decorate(&[42], 510).unwrap();
        assert_eq!(w.real_len(), 3);
        assert_eq!(w.ids.iter().filter(|&&t| t == PAD).count(), 509);

        let w = decorate(&[7, 8, 9, 10], 4).unwrap();
        assert_eq!(w.ids, vec![CLS, 7, 8, 9, 10, SEP]);

        assert!(decorate(&seq(5), 4).is_err());
    }

    fn valid_triple() -> impl Strategy<Value = (usize, usize, usize)> {
        (2usize..40)
            .prop_flat_map(|c| (1usize..400, Just(c), 0..=c / 2))
            .prop_map(|(k, c, h)| (k, c, 2 * h))
    }

    proptest! {
        #[test]
        fn coverage_and_reconstruction((k, c, z) in valid_triple()) {
            let tokens = seq(k);
            let set = chunk_tokens(&tokens, c, z).unwrap();
            prop_assert_eq!(set.len(), chunk_count(k, c, z).unwrap());

            let mut cover = vec![0usize; k];
            for (s, ch) in set.starts.iter().zip(&set.chunks) {
                for i in 0..ch.len() {
                    prop_assert_eq!(ch[i], tokens[s - 1 + i]);
                    cover[s - 1 + i] += 1;
                }
            }
            prop_assert!(cover.iter().all(|&m| (1..=2).contains(&m)));

            let mut rebuilt = set.chunks[0].clone();
            for ch in &set.chunks[1..] {
                rebuilt.extend_from_slice(&ch[z / 2..]);
            }
            prop_assert_eq!(rebuilt, tokens);

            let step = stride(c, z);
            for w in set.starts.windows(2) {
                prop_assert_eq!(w[1] - w[0], step);
            }
        }
    }

    #[test]
    fn overlap_normalisation() {
        assert_eq!(normalize_overlap(408).unwrap(), (408, false));
        assert_eq!(normalize_overlap(205).unwrap(), (204, true));
        assert!(normalize_overlap(151).is_err());
    }
}
