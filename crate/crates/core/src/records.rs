//! Shared data model and the JSON-lines persistence layer.
//!
//! Every line carries a schema version field `"v": 1` ahead of the record's own
//! fields. Reals are written with shortest round-trip precision; NaN and
//! infinities are rejected on both write and read.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

/// Unit-norm tolerance for embeddings.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RecordsError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed {kind}: {message}")]
    Parse { line: usize, kind: &'static str, message: String },
    #[error("line {line}: unsupported schema version {found} (expected {SCHEMA_VERSION})")]
    Version { line: usize, found: u32 },
    #[error("line {line}: invalid {kind}: field `{field}`: {message}")]
    Invariant { line: usize, kind: &'static str, field: String, message: String },
    #[error("line {line}: duplicate {kind} id `{key}`")]
    Duplicate { line: usize, kind: &'static str, key: String },
}

/// A single failed field check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "field `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for FieldError {}

/// A type that can live in a JSON-lines file.
pub trait Record: Serialize + DeserializeOwned {
    const KIND: &'static str;

    /// Checks per-record invariants.
    fn validate(&self) -> Result<(), FieldError>;

    /// Identifier that must be unique within one file, if any.
    fn unique_key(&self) -> Option<&str> {
        None
    }

    /// Embedding length that must agree across the file, if any.
    fn shared_dim(&self) -> Option<usize> {
        None
    }
}

#[derive(Serialize)]
struct LineOut<'a, T> {
    v: u32,
    #[serde(flatten)]
    record: &'a T,
}

#[derive(Deserialize)]
struct LineIn<T> {
    v: u32,
    #[serde(flatten)]
    record: T,
}

fn check_finite(field: &str, value: f64) -> Result<(), FieldError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(FieldError::new(field, format!("non-finite value {value}")))
    }
}

// ---------------------------------------------------------------------------
// Query

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqOption {
    pub letter: String,
    pub text: String,
}

impl McqOption {
    pub fn new(letter: impl Into<String>, text: impl Into<String>) -> Self {
        Self { letter: letter.into(), text: text.into() }
    }
}

/// Gold answer: a single option letter for MCQ, or an alias list for open
/// questions. A bare string on an open question is a one-element alias list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gold {
    Letter(String),
    Aliases(Vec<String>),
}

impl Gold {
    pub fn aliases(&self) -> Vec<&str> {
        match self {
            Gold::Letter(s) => vec![s.as_str()],
            Gold::Aliases(v) => v.iter().map(String::as_str).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<McqOption>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Gold>,
    #[serde(default)]
    pub dataset: String,
    #[serde(default)]
    pub category: String,
}

impl Query {
    pub fn is_mcq(&self) -> bool {
        !self.options.is_empty()
    }
}

impl Record for Query {
    const KIND: &'static str = "query";

    fn validate(&self) -> Result<(), FieldError> {
        if self.id.is_empty() {
            return Err(FieldError::new("id", "must be non-empty"));
        }
        let mut seen = HashSet::new();
        for opt in &self.options {
            if opt.letter.is_empty() {
                return Err(FieldError::new("options", "empty option letter"));
            }
            if !seen.insert(opt.letter.as_str()) {
                return Err(FieldError::new("options", format!("duplicate option letter `{}`", opt.letter)));
            }
        }
        if self.is_mcq() {
            match &self.gold {
                None => {}
                Some(Gold::Letter(l)) if seen.contains(l.as_str()) => {}
                Some(Gold::Letter(l)) => {
                    return Err(FieldError::new("gold", format!("`{l}` is not one of the option letters")))
                }
                Some(Gold::Aliases(_)) => {
                    return Err(FieldError::new("gold", "multiple-choice gold must be a single option letter"))
                }
            }
        }
        Ok(())
    }

    fn unique_key(&self) -> Option<&str> {
        Some(&self.id)
    }
}

// ---------------------------------------------------------------------------
// Generation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    pub tokens: Vec<TokenLogprob>,
    pub temperature: f64,
    pub latency_ms: f64,
}

impl Generation {
    /// Mean per-token log-probability, `None` for an empty generation.
    pub fn mean_logprob(&self) -> Option<f64> {
        if self.tokens.is_empty() {
            return None;
        }
        let sum: f64 = self.tokens.iter().map(|t| t.logprob).sum();
        Some(sum / self.tokens.len() as f64)
    }
}

impl Record for Generation {
    const KIND: &'static str = "generation";

    fn validate(&self) -> Result<(), FieldError> {
        for (i, t) in self.tokens.iter().enumerate() {
            let field = format!("tokens[{i}].logprob");
            check_finite(&field, t.logprob)?;
            if t.logprob > 0.0 {
                return Err(FieldError::new(field, format!("{} > 0", t.logprob)));
            }
        }
        check_finite("temperature", self.temperature)?;
        if self.temperature < 0.0 {
            return Err(FieldError::new("temperature", "must be >= 0"));
        }
        check_finite("latency_ms", self.latency_ms)?;
        if self.latency_ms < 0.0 {
            return Err(FieldError::new("latency_ms", "must be >= 0"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Signals

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalName {
    Logprob,
    Gsa,
    Sc,
    Ks,
    RoutellmNm,
    RoutellmPks,
}

impl SignalName {
    pub const ALL: [SignalName; 6] = [
        SignalName::Logprob,
        SignalName::Gsa,
        SignalName::Sc,
        SignalName::Ks,
        SignalName::RoutellmNm,
        SignalName::RoutellmPks,
    ];

    /// The four signals that need no labeled data.
    pub const ZERO_SHOT: [SignalName; 4] = [SignalName::Logprob, SignalName::Gsa, SignalName::Sc, SignalName::Ks];

    pub fn as_str(self) -> &'static str {
        match self {
            SignalName::Logprob => "logprob",
            SignalName::Gsa => "gsa",
            SignalName::Sc => "sc",
            SignalName::Ks => "ks",
            SignalName::RoutellmNm => "routellm_nm",
            SignalName::RoutellmPks => "routellm_pks",
        }
    }

    /// Closed range a stored value must fall in.
    pub fn range(self) -> (f64, f64) {
        match self {
            SignalName::Ks => (-1.0, 1.0),
            _ => (0.0, 1.0),
        }
    }
}

impl fmt::Display for SignalName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown signal `{0}` (expected one of logprob, gsa, sc, ks, routellm_nm, routellm_pks)")]
pub struct UnknownSignal(pub String);

impl FromStr for SignalName {
    type Err = UnknownSignal;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SignalName::ALL.into_iter().find(|n| n.as_str() == s).ok_or_else(|| UnknownSignal(s.to_string()))
    }
}

/// Parses a comma-separated signal list such as `logprob,gsa`.
pub fn parse_signal_list(s: &str) -> Result<Vec<SignalName>, UnknownSignal> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let name: SignalName = part.parse()?;
        if !out.contains(&name) {
            out.push(name);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SignalVector {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gsa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub routellm_nm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub routellm_pks: Option<f64>,
}

impl SignalVector {
    pub fn get(&self, name: SignalName) -> Option<f64> {
        match name {
            SignalName::Logprob => self.logprob,
            SignalName::Gsa => self.gsa,
            SignalName::Sc => self.sc,
            SignalName::Ks => self.ks,
            SignalName::RoutellmNm => self.routellm_nm,
            SignalName::RoutellmPks => self.routellm_pks,
        }
    }

    pub fn set(&mut self, name: SignalName, value: Option<f64>) {
        let slot = match name {
            SignalName::Logprob => &mut self.logprob,
            SignalName::Gsa => &mut self.gsa,
            SignalName::Sc => &mut self.sc,
            SignalName::Ks => &mut self.ks,
            SignalName::RoutellmNm => &mut self.routellm_nm,
            SignalName::RoutellmPks => &mut self.routellm_pks,
        };
        *slot = value;
    }

    pub fn present(&self) -> impl Iterator<Item = (SignalName, f64)> + '_ {
        SignalName::ALL.into_iter().filter_map(|n| self.get(n).map(|v| (n, v)))
    }

    pub fn is_empty(&self) -> bool {
        self.present().next().is_none()
    }

    /// Range checks only; an empty vector passes.
    pub fn check_ranges(&self) -> Result<(), FieldError> {
        for (name, value) in self.present() {
            let field = format!("signals.{name}");
            check_finite(&field, value)?;
            let (lo, hi) = name.range();
            if value < lo || value > hi {
                return Err(FieldError::new(field, format!("{value} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// EvalRecord

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Regex,
    Substring,
    Judge,
    Manual,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::Regex => "regex",
            LabelSource::Substring => "substring",
            LabelSource::Judge => "judge",
            LabelSource::Manual => "manual",
        }
    }
}

pub type Aux = serde_json::Map<String, serde_json::Value>;

/// Aux key carrying the dataset tag of the originating query.
pub const AUX_DATASET: &str = "dataset";
/// Aux key carrying a per-query cloud correctness label, when known.
pub const AUX_CLOUD_CORRECT: &str = "cloud_correct";
/// Aux key marking gateway log rows that have not been labeled yet.
pub const AUX_UNLABELED: &str = "unlabeled";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query_id: String,
    pub signals: SignalVector,
    pub local_correct: bool,
    pub label_source: LabelSource,
    #[serde(default)]
    pub latencies_ms: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux: Option<Aux>,
}

impl EvalRecord {
    pub fn aux_str(&self, key: &str) -> Option<&str> {
        self.aux.as_ref()?.get(key)?.as_str()
    }

    pub fn aux_bool(&self, key: &str) -> Option<bool> {
        self.aux.as_ref()?.get(key)?.as_bool()
    }

    pub fn dataset(&self) -> &str {
        self.aux_str(AUX_DATASET).unwrap_or("")
    }

    pub fn is_unlabeled(&self) -> bool {
        self.aux_bool(AUX_UNLABELED).unwrap_or(false)
    }

    pub fn set_aux(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.aux.get_or_insert_with(Aux::new).insert(key.to_string(), value.into());
    }
}

impl Record for EvalRecord {
    const KIND: &'static str = "eval record";

    fn validate(&self) -> Result<(), FieldError> {
        if self.query_id.is_empty() {
            return Err(FieldError::new("query_id", "must be non-empty"));
        }
        if self.signals.is_empty() {
            return Err(FieldError::new("signals", "at least one signal must be present"));
        }
        self.signals.check_ranges()?;
        for (name, &ms) in &self.latencies_ms {
            let field = format!("latencies_ms.{name}");
            check_finite(&field, ms)?;
            if ms < 0.0 {
                return Err(FieldError::new(field, "must be >= 0"));
            }
        }
        Ok(())
    }

    fn unique_key(&self) -> Option<&str> {
        Some(&self.query_id)
    }
}

// ---------------------------------------------------------------------------
// KB entries

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbEntry {
    pub id: String,
    pub text: String,
    pub embedding: Vec<f64>,
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl Record for KbEntry {
    const KIND: &'static str = "kb entry";

    fn validate(&self) -> Result<(), FieldError> {
        if self.id.is_empty() {
            return Err(FieldError::new("id", "must be non-empty"));
        }
        if self.embedding.is_empty() {
            return Err(FieldError::new("embedding", "must be non-empty"));
        }
        for &x in &self.embedding {
            check_finite("embedding", x)?;
        }
        let norm = l2_norm(&self.embedding);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(FieldError::new("embedding", format!("norm {norm} is not 1 within {NORM_TOLERANCE}")));
        }
        Ok(())
    }

    fn unique_key(&self) -> Option<&str> {
        Some(&self.id)
    }

    fn shared_dim(&self) -> Option<usize> {
        Some(self.embedding.len())
    }
}

// ---------------------------------------------------------------------------
// Line codec

/// Serializes one record as a JSON line (no trailing newline).
pub fn to_line<T: Record>(record: &T) -> Result<String, FieldError> {
    record.validate()?;
    serde_json::to_string(&LineOut { v: SCHEMA_VERSION, record })
        .map_err(|e| FieldError::new("<record>", e.to_string()))
}

/// Parses and validates one JSON line. `line` is the 1-based line number used
/// in error messages.
pub fn parse_line<T: Record>(text: &str, line: usize) -> Result<T, RecordsError> {
    let parsed: LineIn<T> =
        serde_json::from_str(text).map_err(|e| RecordsError::Parse { line, kind: T::KIND, message: e.to_string() })?;
    if parsed.v != SCHEMA_VERSION {
        return Err(RecordsError::Version { line, found: parsed.v });
    }
    parsed.record.validate().map_err(|e| invariant::<T>(line, e))?;
    Ok(parsed.record)
}

fn invariant<T: Record>(line: usize, e: FieldError) -> RecordsError {
    RecordsError::Invariant { line, kind: T::KIND, field: e.field, message: e.message }
}

/// Cross-record checks shared by read and write: unique keys and, for KB
/// entries, a common embedding dimension.
#[derive(Default)]
struct FileChecker {
    seen: HashSet<String>,
    dim: Option<usize>,
}

impl FileChecker {
    fn check<T: Record>(&mut self, record: &T, line: usize) -> Result<(), RecordsError> {
        if let Some(key) = record.unique_key() {
            if !self.seen.insert(key.to_string()) {
                return Err(RecordsError::Duplicate { line, kind: T::KIND, key: key.to_string() });
            }
        }
        if let Some(d) = record.shared_dim() {
            match self.dim {
                None => self.dim = Some(d),
                Some(expected) if expected != d => {
                    return Err(invariant::<T>(
                        line,
                        FieldError::new(
                            "embedding",
                            format!("dimension {d} differs from {expected} earlier in the file"),
                        ),
                    ))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// Parses a whole JSON-lines document. Blank lines are skipped.
pub fn parse_records<T: Record>(text: &str) -> Result<Vec<T>, RecordsError> {
    let mut out = Vec::new();
    let mut checker = FileChecker::default();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let record: T = parse_line(raw, i + 1)?;
        checker.check(&record, i + 1)?;
        out.push(record);
    }
    Ok(out)
}

/// Reads every record in `path`, checking invariants line by line.
pub fn read_records<T: Record>(path: impl AsRef<Path>) -> Result<Vec<T>, RecordsError> {
    let path = path.as_ref();
    let io_err = |source| RecordsError::Io { path: path.to_path_buf(), source };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    let mut checker = FileChecker::default();
    for (i, raw) in reader.lines().enumerate() {
        let raw = raw.map_err(io_err)?;
        if raw.trim().is_empty() {
            continue;
        }
        let record: T = parse_line(&raw, i + 1)?;
        checker.check(&record, i + 1)?;
        out.push(record);
    }
    Ok(out)
}

/// Renders records to a JSON-lines string, one `\n`-terminated line each.
pub fn render_records<T: Record>(records: &[T]) -> Result<String, RecordsError> {
    let mut out = String::new();
    let mut checker = FileChecker::default();
    for (i, record) in records.iter().enumerate() {
        let line = to_line(record).map_err(|e| invariant::<T>(i + 1, e))?;
        checker.check(record, i + 1)?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

/// Writes records as JSON lines and returns how many were written. Nothing is
/// written if any record fails validation.
pub fn write_records<T: Record>(path: impl AsRef<Path>, records: &[T]) -> Result<usize, RecordsError> {
    let path = path.as_ref();
    let body = render_records(records)?;
    let io_err = |source| RecordsError::Io { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    w.write_all(body.as_bytes()).map_err(io_err)?;
    w.flush().map_err(io_err)?;
    Ok(records.len())
}

/// Checks that every eval record points at a known query.
pub fn check_references(records: &[EvalRecord], queries: &[Query]) -> Result<(), FieldError> {
    let ids: HashSet<&str> = queries.iter().map(|q| q.id.as_str()).collect();
    for r in records {
        if !ids.contains(r.query_id.as_str()) {
            return Err(FieldError::new("query_id", format!("`{}` does not match any query", r.query_id)));
        }
    }
    Ok(())
}
