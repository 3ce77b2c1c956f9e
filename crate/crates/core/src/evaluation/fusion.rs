use super::EvalError;
use crate::records::{EvalRecord, SignalName};

/// Unweighted mean of the named signals per record. KS enters raw.
pub fn fuse_mean(records: &[EvalRecord], subset: &[SignalName]) -> Result<Vec<f64>, EvalError> {
    if subset.is_empty() {
        return Err(EvalError::InvalidArg("fusion subset is empty".into()));
    }
    records
        .iter()
        .map(|r| {
            let mut sum = 0.0;
            for &name in subset {
                sum += r.signals.get(name).ok_or_else(|| EvalError::MissingSignal {
                    query_id: r.query_id.clone(),
                    signal: name.to_string(),
                })?;
            }
            Ok(sum / subset.len() as f64)
        })
        .collect()
}

/// Every non-empty subset of `signals`, smaller subsets first, each in the
/// order the signals were given.
pub fn fusion_subsets(signals: &[SignalName]) -> Vec<Vec<SignalName>> {
    let n = signals.len();
    let mut subsets: Vec<Vec<usize>> =
        (1..(1u32 << n)).map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect()).collect();
    subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    subsets.into_iter().map(|idx| idx.into_iter().map(|i| signals[i]).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::{LabelSource, SignalVector};

    fn rec(id: &str, logprob: Option<f64>, gsa: Option<f64>) -> EvalRecord {
        EvalRecord {
            query_id: id.into(),
            signals: SignalVector { logprob, gsa, ..Default::default() },
            local_correct: true,
            label_source: LabelSource::Regex,
            latencies_ms: Default::default(),
            aux: None,
        }
    }

    #[test]
    fn singleton_and_pair_means() {
        let rs = [rec("a", Some(0.8), Some(0.4)), rec("b", Some(0.1), Some(0.3))];
        assert_eq!(fuse_mean(&rs, &[SignalName::Logprob]).unwrap(), vec![0.8, 0.1]);
        let fused = fuse_mean(&rs, &[SignalName::Logprob, SignalName::Gsa]).unwrap();
        assert!((fused[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn missing_slot_names_query() {
        let rs = [rec("a", Some(0.8), None)];
        assert_eq!(
            fuse_mean(&rs, &[SignalName::Gsa]).unwrap_err(),
            EvalError::MissingSignal { query_id: "a".into(), signal: "gsa".into() }
        );
    }

    #[test]
    fn subsets_enumerate_in_size_order() {
        let s = fusion_subsets(&[SignalName::Logprob, SignalName::Gsa, SignalName::Sc]);
        assert_eq!(s.len(), 7);
        assert_eq!(s[0], vec![SignalName::Logprob]);
        assert_eq!(s[2], vec![SignalName::Sc]);
        assert_eq!(s[3], vec![SignalName::Logprob, SignalName::Gsa]);
        assert_eq!(s[6].len(), 3);
    }
}
