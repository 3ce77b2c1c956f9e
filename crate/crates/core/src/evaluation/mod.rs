//! Offline evaluation: correctness labeling, AUROC with bootstrap intervals
//! and paired deltas, mean fusion, operating points, latency summaries and
//! report rendering.

mod fusion;
mod labeling;
mod metrics;
mod operating;
pub mod report;

use thiserror::Error;

pub use fusion::{fuse_mean, fusion_subsets};
pub use labeling::{extract_letter, label_mcq, label_open, normalize_answer, Extraction, LabelOutcome, MCQ_PATTERNS};
pub use metrics::{
    auroc, auroc_brute_force, bootstrap_ci, paired_delta, quantile, BootstrapConfig, PairedDelta, MAX_REDRAWS,
};
pub use operating::{latency_summary, operating_points, OperatingPoint, DEFAULT_FRACS};
pub use report::{report, Report, ReportOptions};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("AUROC needs both classes; got {positives} positive and {negatives} negative labels")]
    SingleClass { positives: usize, negatives: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("non-finite score at position {0}")]
    NonFinite(usize),
    #[error("no labeled records")]
    EmptyRecords,
    #[error("bootstrap resample stayed single-class after {0} redraws")]
    RetryExhausted(usize),
    #[error("query `{query_id}` has no `{signal}` signal")]
    MissingSignal { query_id: String, signal: String },
    #[error("alias list is empty after normalization")]
    EmptyAliases,
    #[error("invalid argument: {0}")]
    InvalidArg(String),
}
