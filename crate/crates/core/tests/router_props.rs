use std::collections::BTreeSet;

use confroute_core::records::{EvalRecord, LabelSource, SignalName, SignalVector};
use confroute_core::rng::{self, Rng, Stream};
use confroute_core::router::{below, calibrate_threshold, replay_decision, Mode, RoutingPolicy, Source};
use proptest::prelude::*;

fn record(i: usize, gsa: f64, logprob: f64) -> EvalRecord {
    EvalRecord {
        query_id: format!("q{i:04}"),
        signals: SignalVector { gsa: Some(gsa), logprob: Some(logprob), ..Default::default() },
        local_correct: true,
        label_source: LabelSource::Regex,
        latencies_ms: Default::default(),
        aux: None,
    }
}

fn escalated(records: &[EvalRecord], policy: &RoutingPolicy) -> BTreeSet<usize> {
    records
        .iter()
        .enumerate()
        .filter(|(_, r)| replay_decision(&r.signals, &[], policy, None) == Source::Cloud)
        .map(|(i, _)| i)
        .collect()
}

proptest! {
    #[test]
    fn escalation_set_is_monotone_in_theta(
        scores in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..200),
        t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0, which in 0usize..3,
    ) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let records: Vec<EvalRecord> = scores.iter().enumerate().map(|(i, &(g, l))| record(i, g, l)).collect();
        let policy = |t: f64| match which {
            0 => RoutingPolicy { mode: Mode::PreOnly, theta_pre: t, ..Default::default() },
            1 => RoutingPolicy { mode: Mode::PostOnly, theta_post: t, ..Default::default() },
            _ => RoutingPolicy { mode: Mode::TwoStage, theta_pre: t, theta_post: t, ..Default::default() },
        };
        let (small, large) = (escalated(&records, &policy(lo)), escalated(&records, &policy(hi)));
        prop_assert!(small.is_subset(&large));
    }

    #[test]
    fn calibrated_threshold_hits_target(
        scores in prop::collection::vec(0.0f64..=1.0, 1..400),
        target in 0.0f64..=1.0,
    ) {
        let records: Vec<EvalRecord> = scores.iter().enumerate().map(|(i, &s)| record(i, 0.5, s)).collect();
        let theta = calibrate_threshold(&records, SignalName::Logprob, target).unwrap();
        let n = scores.len() as f64;
        let count = scores.iter().filter(|&&s| below(s, theta)).count() as f64;
        // distinct continuous scores: the quantile lands within one query
        prop_assert!((count - target * n).abs() <= 1.0 + 1e-9, "{count} vs {}", target * n);
    }
}

#[test]
fn uniform_scores_escalate_eighty_percent() {
    let mut r = rng::stream(42, Stream::Synthetic);
    let records: Vec<EvalRecord> = (0..1000).map(|i| record(i, 0.5, r.gen_range(0.0..1.0))).collect();
    let theta = calibrate_threshold(&records, SignalName::Logprob, 0.8).unwrap();
    // linear quantile oracle on the sorted sample: position 0.8 * 999
    let mut sorted: Vec<f64> = records.iter().map(|r| r.signals.logprob.unwrap()).collect();
    sorted.sort_by(f64::total_cmp);
    let oracle = sorted[799] + (sorted[800] - sorted[799]) * (0.8 * 999.0 - 799.0);
    assert!((theta - oracle).abs() < 1e-12);
    let policy = RoutingPolicy { mode: Mode::PostOnly, theta_post: theta, ..Default::default() };
    let n = escalated(&records, &policy).len();
    assert!((799..=801).contains(&n), "{n}");
}
