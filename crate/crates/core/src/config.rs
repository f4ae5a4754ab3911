//! Run configuration: a JSON file, then `key.path=value` overrides, then flags.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::SyntheticSpec;
use crate::error::{Error, Result};
use crate::eval::BootstrapConfig;
use crate::model::PipelineConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub bootstrap: BootstrapConfig,
    pub slices: Vec<f64>,
    pub buckets: Option<usize>,
    pub alpha: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            bootstrap: BootstrapConfig::default(),
            slices: vec![0.1, 0.01],
            buckets: None,
            alpha: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    pub corpus: SyntheticSpec,
    pub eval: EvalConfig,
    /// Middle-truncation chunk budget applied before prediction, if set.
    pub truncate_budget: Option<usize>,
}

fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets `path` (dot-separated) inside `root`. Every segment must already exist
/// except where the parent is an explicit `null` option.
fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("'{}' is not a section", parts[..i].join("."))))?;
        let slot = obj
            .get_mut(*part)
            .ok_or_else(|| Error::Config(format!("unknown config key '{path}'")))?;
        if i + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        cur = slot;
    }
    unreachable!("split yields at least one segment")
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies `key.path=value` assignments; values parse as JSON, else as strings.
    pub fn apply_overrides<S: AsRef<str>>(self, assignments: &[S]) -> Result<Self> {
        if assignments.is_empty() {
            return Ok(self);
        }
        let mut tree = serde_json::to_value(&self)?;
        for a in assignments {
            let a = a.as_ref();
            let (key, raw) = a
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{a}' is not key=value")))?;
            set_path(&mut tree, key.trim(), parse_scalar(raw.trim()))?;
        }
        serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))
    }

    /// Propagates the run seed and derives dependent widths.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.pipeline.seed = seed;
        self.train.seed = seed;
        self.corpus.seed = seed;
        self.eval.bootstrap.seed = seed;
        self
    }

    pub fn resolve(mut self) -> Result<Self> {
        self.pipeline.recurrence.input_width = self.pipeline.encoder.output_width();
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.corpus.validate()?;
        self.eval
            .bootstrap
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if !(self.eval.alpha > 0.0 && self.eval.alpha < 1.0) {
            return Err(Error::Config(format!("eval.alpha {} not in (0, 1)", self.eval.alpha)));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if let Some(b) = self.truncate_budget {
            if b < 2 {
                return Err(Error::Config(format!("truncate_budget {b} must be at least 2")));
            }
        }
        Ok(())
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_in_order() {
        let cfg = RunConfig::default()
            .apply_overrides(&[
                "pipeline.chunk_size=64",
                "pipeline.encoder.max_window=66",
                "train.max_lr=0.01",
                "pipeline.chunk_size=32",
            ])
            .unwrap();
        assert_eq!(cfg.pipeline.chunk_size, 32);
        assert_eq!(cfg.pipeline.encoder.max_window, 66);
        assert_eq!(cfg.train.max_lr, 0.01);
    }

    #[test]
    fn enum_and_option_values() {
        let cfg = RunConfig::default()
            .apply_overrides(&["corpus.policy=head-only", "truncate_budget=15", "eval.buckets=4"])
            .unwrap();
        assert_eq!(cfg.corpus.policy, crate::corpus::SignalPolicy::HeadOnly);
        assert_eq!(cfg.truncate_budget, Some(15));
        assert_eq!(cfg.eval.buckets, Some(4));
    }

    #[test]
    fn unknown_key_and_bad_value_rejected() {
        assert!(RunConfig::default().apply_overrides(&["pipeline.nope=1"]).is_err());
        assert!(RunConfig::default()
            .apply_overrides(&["pipeline.chunk_size=big"])
            .is_err());
        assert!(RunConfig::default().apply_overrides(&["pipeline"]).is_err());
        assert!(RunConfig::from_json("{\"bogus\": 1}").is_err());
    }

    #[test]
    fn file_values_then_overrides() {
        let cfg =
            RunConfig::from_json("{\"pipeline\": {\"chunk_size\": 100, \"encoder\": {\"max_window\": 102}}}").unwrap();
        assert_eq!(cfg.pipeline.chunk_size, 100);
        assert_eq!(cfg.pipeline.max_c, 15);
        let cfg = cfg.apply_overrides(&["pipeline.chunk_size=50"]).unwrap();
        assert_eq!(cfg.pipeline.chunk_size, 50);
    }

    #[test]
    fn contradictions_rejected() {
        let cfg = RunConfig::default()
            .apply_overrides(&["pipeline.chunk_size=600"])
            .unwrap();
        let err = cfg.resolve().unwrap_err().to_string();
        assert!(err.contains("max_window"), "{err}");
    }

    #[test]
    fn seed_propagates_and_round_trips() {
        let cfg = RunConfig::default().with_seed(9).resolve().unwrap();
        assert_eq!(
            (
                cfg.pipeline.seed,
                cfg.train.seed,
                cfg.corpus.seed,
                cfg.eval.bootstrap.seed
            ),
            (9, 9, 9, 9)
        );
        assert_eq!(RunConfig::from_json(&cfg.to_pretty_json()).unwrap(), cfg);
    }
}
