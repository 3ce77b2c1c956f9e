use std::collections::BTreeMap;

use confroute_core::records::{
    parse_line, parse_records, render_records, EvalRecord, Generation, Gold, KbEntry, LabelSource, McqOption, Query,
    SignalVector, TokenLogprob,
};
use proptest::prelude::*;

fn signal_vector() -> impl Strategy<Value = SignalVector> {
    (
        prop::option::of(0.0f64..=1.0),
        prop::option::of(0.0f64..=1.0),
        prop::option::of(0.0f64..=1.0),
        prop::option::of(-1.0f64..=1.0),
        prop::option::of(0.0f64..=1.0),
        prop::option::of(0.0f64..=1.0),
    )
        .prop_map(|(logprob, gsa, sc, ks, routellm_nm, routellm_pks)| SignalVector {
            logprob,
            gsa,
            sc,
            ks,
            routellm_nm,
            routellm_pks,
        })
        .prop_filter("at least one signal", |s| !s.is_empty())
}

fn eval_record() -> impl Strategy<Value = EvalRecord> {
    (
        "[a-z0-9_-]{1,12}",
        signal_vector(),
        any::<bool>(),
        prop::sample::select(vec![LabelSource::Regex, LabelSource::Substring, LabelSource::Judge, LabelSource::Manual]),
        prop::collection::btree_map("[a-z]{1,8}", 0.0f64..1e6, 0..4),
        prop::option::of("[a-z]{0,8}"),
    )
        .prop_map(
            |(query_id, signals, local_correct, label_source, latencies_ms, dataset): (
                _,
                _,
                _,
                _,
                BTreeMap<String, f64>,
                _,
            )| {
                let mut r = EvalRecord { query_id, signals, local_correct, label_source, latencies_ms, aux: None };
                if let Some(d) = dataset {
                    r.set_aux("dataset", d);
                }
                r
            },
        )
}

fn query() -> impl Strategy<Value = Query> {
    ("[a-z0-9]{1,8}", "\\PC{1,40}", any::<bool>(), prop::collection::vec("\\PC{1,10}", 1..3)).prop_map(
        |(id, text, mcq, aliases)| {
            if mcq {
                Query {
                    id,
                    text,
                    options: vec![McqOption::new("A", "yes"), McqOption::new("B", "no")],
                    gold: Some(Gold::Letter("B".into())),
                    dataset: "mcq".into(),
                    category: "x".into(),
                }
            } else {
                Query {
                    id,
                    text,
                    options: vec![],
                    gold: Some(Gold::Aliases(aliases)),
                    dataset: "open".into(),
                    category: String::new(),
                }
            }
        },
    )
}

proptest! {
    #[test]
    fn eval_records_round_trip(r in eval_record()) {
        let text = render_records(std::slice::from_ref(&r)).unwrap();
        let back: Vec<EvalRecord> = parse_records(&text).unwrap();
        prop_assert_eq!(back, vec![r]);
    }

    #[test]
    fn queries_round_trip(q in query()) {
        let text = render_records(std::slice::from_ref(&q)).unwrap();
        let back: Vec<Query> = parse_records(&text).unwrap();
        prop_assert_eq!(back, vec![q]);
    }

    #[test]
    fn generations_round_trip(
        tokens in prop::collection::vec(("\\PC{1,6}", -50.0f64..=0.0), 1..8),
        temperature in 0.0f64..2.0,
        latency_ms in 0.0f64..1e5,
    ) {
        let g = Generation {
            text: tokens.iter().map(|t| t.0.as_str()).collect(),
            tokens: tokens.into_iter().map(|(token, logprob)| TokenLogprob { token, logprob }).collect(),
            temperature,
            latency_ms,
        };
        let text = render_records(std::slice::from_ref(&g)).unwrap();
        prop_assert_eq!(parse_records::<Generation>(&text).unwrap(), vec![g]);
    }

    #[test]
    fn arbitrary_lines_never_panic(line in "\\PC{0,200}") {
        let _ = parse_line::<EvalRecord>(&line, 1);
        let _ = parse_line::<Query>(&line, 1);
        let _ = parse_line::<KbEntry>(&line, 1);
        let _ = parse_line::<Generation>(&line, 1);
    }

    #[test]
    fn json_shaped_noise_never_panics(
        keys in prop::collection::vec(prop::sample::select(vec!["v", "query_id", "signals", "local_correct", "label_source", "latencies_ms", "aux", "logprob", "ks"]), 0..6),
        vals in prop::collection::vec(prop::sample::select(vec!["1", "-1", "1e999", "null", "\"x\"", "true", "{}", "[]", "{\"ks\":2}"]), 6),
    ) {
        let body: Vec<String> = keys.iter().zip(&vals).map(|(k, v)| format!("\"{k}\":{v}")).collect();
        let line = format!("{{{}}}", body.join(","));
        let _ = parse_line::<EvalRecord>(&line, 3);
    }
}
