use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::records::{EvalRecord, SignalName, AUX_CLOUD_CORRECT};

/// Escalation fractions of the standard operating-point table.
pub const DEFAULT_FRACS: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    /// Fraction of queries escalated to the cloud model.
    pub escalate_frac: f64,
    pub mixed_accuracy: f64,
    /// `mixed_accuracy / cloud_accuracy`.
    pub quality_preservation: f64,
}

/// Mixed local/cloud accuracy when the lowest-scoring fraction of queries is
/// escalated.
///
/// Queries are ranked ascending by `signal` (ties by query id) and the bottom
/// `round(k * n)` go to the cloud. An escalated query counts its per-query
/// `cloud_correct` aux label when present and `cloud_accuracy` otherwise.
pub fn operating_points(
    records: &[EvalRecord],
    signal: SignalName,
    fracs: &[f64],
    cloud_accuracy: f64,
) -> Result<Vec<OperatingPoint>, EvalError> {
    if !(cloud_accuracy > 0.0 && cloud_accuracy <= 1.0) {
        return Err(EvalError::InvalidArg(format!("cloud accuracy {cloud_accuracy} outside (0, 1]")));
    }
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    let mut ranked: Vec<(f64, &EvalRecord)> = records
        .iter()
        .map(|r| {
            r.signals
                .get(signal)
                .map(|s| (s, r))
                .ok_or_else(|| EvalError::MissingSignal { query_id: r.query_id.clone(), signal: signal.to_string() })
        })
        .collect::<Result<_, _>>()?;
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.query_id.cmp(&b.1.query_id)));

    let n = ranked.len();
    let cloud_credit = |r: &EvalRecord| match r.aux_bool(AUX_CLOUD_CORRECT) {
        Some(true) => 1.0,
        Some(false) => 0.0,
        None => cloud_accuracy,
    };
    // prefix sums: escalated credit over the bottom m, local credit over the rest
    let mut cloud_prefix = vec![0.0; n + 1];
    let mut local_suffix = vec![0.0; n + 1];
    for (i, (_, r)) in ranked.iter().enumerate() {
        cloud_prefix[i + 1] = cloud_prefix[i] + cloud_credit(r);
    }
    for i in (0..n).rev() {
        local_suffix[i] = local_suffix[i + 1] + if ranked[i].1.local_correct { 1.0 } else { 0.0 };
    }

    fracs
        .iter()
        .map(|&k| {
            if !(0.0..=1.0).contains(&k) {
                return Err(EvalError::InvalidArg(format!("escalation fraction {k} outside [0, 1]")));
            }
            let m = (k * n as f64).round() as usize;
            let mixed_accuracy = (cloud_prefix[m] + local_suffix[m]) / n as f64;
            Ok(OperatingPoint {
                escalate_frac: k,
                mixed_accuracy,
                quality_preservation: mixed_accuracy / cloud_accuracy,
            })
        })
        .collect()
}

/// Mean recorded latency per signal; signals never measured are omitted.
pub fn latency_summary(records: &[EvalRecord]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in records {
        for (name, &ms) in &r.latencies_ms {
            let e = acc.entry(name.clone()).or_insert((0.0, 0));
            e.0 += ms;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(k, (sum, n))| (k, sum / n as f64)).collect()
}
