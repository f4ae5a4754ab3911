//! Metrics, resampling intervals, signed-rank tests and ranking.

pub mod bootstrap;
pub mod buckets;
pub mod dump;
pub mod metrics;
pub mod ranking;
pub mod report;
pub mod stats;

pub use bootstrap::{bootstrap_ci, BootstrapConfig, Interval};
pub use buckets::{length_groups, longest_fraction};
pub use dump::{read_dump, write_dump, DumpRecord};
pub use metrics::{confusion, macro_f1, mcc, ConfusionCounts, Metric};
pub use ranking::{cd_ranking, compare_dumps, CdRanking};
pub use report::{evaluate, length_buckets, EvalOptions, EvaluationReport, FullReport};
pub use stats::{holm_correct, wilcoxon_signed_rank, WilcoxonResult};
