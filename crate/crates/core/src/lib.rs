//! Confidence-gated routing between a cheap local LLM and an expensive cloud
//! model, plus the offline harness used to evaluate the confidence signals.
//!
//! Module map:
//!
//! * [`records`]: shared data model and JSON-lines persistence.
//! * [`backends`]: client contracts for generation, binary scoring, embedding
//!   and judging, with an HTTP adapter and a deterministic mock.
//! * [`kb`]: exact inner-product retrieval over unit-norm embeddings.
//! * [`signals`]: the zero-shot confidence signals.
//! * [`supervised`]: logistic-regression routing baselines and learning curves.
//! * [`evaluation`]: labeling, AUROC with bootstrap intervals, fusion,
//!   operating points and report rendering.
//! * [`harness`]: per-query signal computation for evaluation runs.
//! * [`router`]: live routing policy and threshold calibration.

pub mod backends;
pub mod evaluation;
pub mod harness;
pub mod kb;
pub mod prompts;
pub mod records;
pub mod rng;
pub mod router;
pub mod signals;
pub mod supervised;

pub use records::{EvalRecord, Generation, KbEntry, LabelSource, Query, SignalName, SignalVector};
