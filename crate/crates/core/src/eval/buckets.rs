use std::cmp::Ordering;

use super::dump::DumpRecord;
use crate::error::{Error, Result};

fn by_length_then_id(a: &&DumpRecord, b: &&DumpRecord) -> Ordering {
    a.length.cmp(&b.length).then_with(|| a.id.cmp(&b.id))
}

pub fn sorted_by_length(records: &[DumpRecord]) -> Vec<&DumpRecord> {
    let mut v: Vec<&DumpRecord> = records.iter().collect();
    v.sort_by(by_length_then_id);
    v
}

/// Splits records into `groups` groups of near-equal size by ascending length,
/// ties broken by id. Group sizes differ by at most one and the larger groups
/// are the longest ones.
pub fn length_groups(records: &[DumpRecord], groups: usize) -> Result<Vec<Vec<&DumpRecord>>> {
    if groups == 0 {
        return Err(Error::invalid("group count must be at least 1"));
    }
    if groups > records.len() {
        return Err(Error::invalid(format!(
            "{groups} groups requested for {} documents",
            records.len()
        )));
    }
    let sorted = sorted_by_length(records);
    let base = sorted.len() / groups;
    let extra = sorted.len() % groups;
    let mut out = Vec::with_capacity(groups);
    let mut start = 0;
    for g in 0..groups {
        let size = base + usize::from(g >= groups - extra);
        out.push(sorted[start..start + size].to_vec());
        start += size;
    }
    Ok(out)
}

/// The longest `fraction` of records: ⌈fraction·N⌉ of them, at least one.
pub fn longest_fraction(records: &[DumpRecord], fraction: f64) -> Result<Vec<&DumpRecord>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("slice fraction {fraction} not in (0, 1]")));
    }
    if records.is_empty() {
        return Err(Error::Empty("records"));
    }
    let sorted = sorted_by_length(records);
    let n = sorted.len();
    let take = ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    Ok(sorted[n - take..].to_vec())
}
