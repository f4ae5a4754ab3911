//! Prediction dumps: one JSON object per line.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpRecord {
    pub id: String,
    /// Token length k.
    pub length: usize,
    pub label: u8,
    pub probability: f64,
    pub prediction: u8,
    pub model: String,
}

pub fn predictions(records: &[DumpRecord]) -> Vec<u8> {
    records.iter().map(|r| r.prediction).collect()
}

pub fn labels(records: &[DumpRecord]) -> Vec<u8> {
    records.iter().map(|r| r.label).collect()
}

pub fn write_dump(records: &[DumpRecord], out: &mut impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn parse_dump(text: &str, path: &Path) -> Result<Vec<DumpRecord>> {
    let mut records = Vec::new();
    let mut bad = Vec::new();
    let mut reason = String::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<DumpRecord>(line) {
            Ok(r) if r.label <= 1 && r.prediction <= 1 => records.push(r),
            Ok(_) => {
                bad.push(i + 1);
                reason = "label and prediction must be 0 or 1".into();
            }
            Err(e) => {
                bad.push(i + 1);
                reason = e.to_string();
            }
        }
    }
    if !bad.is_empty() {
        return Err(Error::Malformed {
            path: path.into(),
            lines: bad,
            reason,
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

pub fn read_dump(path: &Path) -> Result<Vec<DumpRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dump(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let recs = vec![
            DumpRecord {
                id: "a".into(),
                length: 12,
                label: 1,
                probability: 0.875,
                prediction: 1,
                model: "m".into(),
            },
            DumpRecord {
                id: "b".into(),
                length: 3,
                label: 0,
                probability: 0.1,
                prediction: 0,
                model: "m".into(),
            },
        ];
        let mut buf = Vec::new();
        write_dump(&recs, &mut buf).unwrap();
        let back = parse_dump(std::str::from_utf8(&buf).unwrap(), Path::new("x")).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn bad_lines_reported() {
        let text =
            "{\"id\":\"a\",\"length\":1,\"label\":2,\"probability\":0.5,\"prediction\":1,\"model\":\"m\"}\nnot json\n";
        match parse_dump(text, Path::new("d.jsonl")).unwrap_err() {
            Error::Malformed { lines, .. } => assert_eq!(lines, vec![1, 2]),
            e => panic!("{e}"),
        }
        assert!(parse_dump("", Path::new("d.jsonl")).is_err());
    }
}
