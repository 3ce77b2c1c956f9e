//! Per-query signal computation shared by the offline evaluation run and
//! the live router.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backends::{Backend, Embedder, Judge};
use crate::evaluation::{label_mcq, label_open, LabelOutcome};
use crate::kb::KnowledgeIndex;
use crate::prompts::answer_prompt;
use crate::records::{
    EvalRecord, FieldError, Generation, Gold, LabelSource, Query, Record, SignalName, SignalVector, AUX_CLOUD_CORRECT,
    AUX_DATASET,
};
use crate::signals::{
    gsa_prompt, gsa_signal, knowledge_signal, logprob_signal, self_consistency, strong_hits, GsaConfig, GsaScore,
    GsaVariant, LogprobMapping, SignalError, SC_TEMPERATURES,
};
use crate::supervised::{featurize, predict, LogRegModel, TrainingExample};

/// Aux key holding the number of knowledge entries injected into the probe.
pub const AUX_KB_HITS: &str = "kb_hits";

/// Runs `f` and returns its value with a latency: the simulated figure when
/// the backend reports one, wall-clock time otherwise.
pub fn measure<T, E>(
    f: impl FnOnce() -> Result<T, E>,
    simulated: impl FnOnce(&T) -> Option<f64>,
) -> Result<(T, f64), E> {
    let start = Instant::now();
    let value = f()?;
    let wall = start.elapsed().as_secs_f64() * 1000.0;
    let ms = simulated(&value).unwrap_or(wall);
    Ok((value, ms))
}

/// Backends and shared read-only state.
#[derive(Clone)]
pub struct Services {
    pub local: Arc<dyn Backend>,
    pub cloud: Option<Arc<dyn Backend>>,
    pub judge: Option<Arc<dyn Judge>>,
    pub embedder: Option<Arc<dyn Embedder>>,
    pub kb: Option<Arc<KnowledgeIndex>>,
    pub model: Option<Arc<LogRegModel>>,
    pub gsa: GsaConfig,
    pub mapping: LogprobMapping,
}

impl Services {
    pub fn new(local: Arc<dyn Backend>) -> Self {
        Self {
            local,
            cloud: None,
            judge: None,
            embedder: None,
            kb: None,
            model: None,
            gsa: GsaConfig::default(),
            mapping: LogprobMapping::default(),
        }
    }

    pub fn embed(&self, q: &Query) -> Result<(Vec<f64>, f64), SignalError> {
        let embedder = self.embedder.as_ref().ok_or_else(|| SignalError::Config("no embedder configured".into()))?;
        Ok(measure(|| embedder.embed(&q.text), |_| embedder.simulated_embed_ms())?)
    }

    /// Self-assessment probe. The conditional variant retrieves from the
    /// knowledge base when both a KB and a query embedding are available;
    /// otherwise it sends the bare probe. Returns the score, the number of
    /// injected entries and the probe latency.
    pub fn gsa(&self, q: &Query, embedding: Option<&[f64]>) -> Result<(GsaScore, usize, f64), SignalError> {
        let hits = match (self.gsa.variant, &self.kb, embedding) {
            (GsaVariant::V3Conditional, Some(kb), Some(e)) => kb.top_k(e, self.gsa.max_hits.max(1))?,
            _ => Vec::new(),
        };
        let injected = strong_hits(&hits, &self.gsa).len();
        let prompt = gsa_prompt(q, &hits, &self.gsa);
        let (score, ms) = measure(|| gsa_signal(&*self.local, &prompt), |_| self.local.simulated_score_ms())?;
        Ok((score, injected, ms))
    }

    pub fn ks(&self, embedding: &[f64]) -> Result<f64, SignalError> {
        let kb = self.kb.as_ref().ok_or_else(|| SignalError::Config("no knowledge base loaded".into()))?;
        knowledge_signal(kb, embedding)
    }

    /// Supervised router probability for a query, with the signal name it
    /// is recorded under.
    pub fn supervised(&self, embedding: &[f64], ks: Option<f64>) -> Result<(SignalName, f64), SignalError> {
        let model = self.model.as_ref().ok_or_else(|| SignalError::Config("no supervised model loaded".into()))?;
        let features = featurize(embedding, ks, model.variant).map_err(|e| SignalError::Config(e.to_string()))?;
        let p = predict(model, &features).map_err(|e| SignalError::Config(e.to_string()))?;
        Ok((model.variant.signal(), p))
    }

    pub fn generate(&self, q: &Query, temperature: f64) -> Result<Generation, SignalError> {
        let gen = self.local.generate(&answer_prompt(q), temperature)?;
        if gen.tokens.is_empty() {
            return Err(SignalError::EmptyGeneration);
        }
        Ok(gen)
    }

    fn label(&self, q: &Query, response: &str) -> Result<LabelOutcome, String> {
        let gold = q.gold.as_ref().ok_or("query has no gold answer")?;
        if q.is_mcq() {
            let Gold::Letter(letter) = gold else {
                return Err("multiple-choice gold must be a single letter".into());
            };
            let gold_text = q
                .options
                .iter()
                .find(|o| o.letter.eq_ignore_ascii_case(letter.trim()))
                .map_or(letter.as_str(), |o| o.text.as_str());
            Ok(label_mcq(response, letter, &q.text, gold_text, self.judge.as_deref()))
        } else {
            let correct = label_open(response, &gold.aliases()).map_err(|e| e.to_string())?;
            Ok(LabelOutcome::Labeled { correct, source: LabelSource::Substring })
        }
    }
}

/// A query that produced no record, with the stage that failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub query_id: String,
    pub stage: String,
    pub reason: String,
}

impl Record for Failure {
    const KIND: &'static str = "failure";

    fn validate(&self) -> Result<(), FieldError> {
        if self.query_id.is_empty() {
            return Err(FieldError::new("query_id", "must be non-empty"));
        }
        Ok(())
    }

    fn unique_key(&self) -> Option<&str> {
        Some(&self.query_id)
    }
}

#[derive(Debug, Clone)]
pub struct EvalRunConfig {
    /// Signals to compute. Supervised signals need a loaded model whose
    /// variant matches.
    pub signals: BTreeSet<SignalName>,
    pub workers: usize,
    /// Label the cloud model's answer too, stored as aux `cloud_correct`.
    pub label_cloud: bool,
}

impl Default for EvalRunConfig {
    fn default() -> Self {
        Self { signals: SignalName::ZERO_SHOT.into_iter().collect(), workers: 1, label_cloud: false }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalRun {
    /// Sorted by query id.
    pub records: Vec<EvalRecord>,
    /// Sorted by query id.
    pub failures: Vec<Failure>,
    /// Embedding rows for supervised training; present when an embedder is
    /// configured.
    pub features: Vec<TrainingExample>,
}

enum Outcome {
    Done(Box<EvalRecord>, Option<TrainingExample>),
    Failed(Failure),
}

fn fail(q: &Query, stage: &str, reason: impl ToString) -> Outcome {
    Outcome::Failed(Failure { query_id: q.id.clone(), stage: stage.to_string(), reason: reason.to_string() })
}

/// Evaluates a single query.
fn evaluate_query(services: &Services, cfg: &EvalRunConfig, q: &Query) -> Outcome {
    let wants = |s: SignalName| cfg.signals.contains(&s);
    let mut signals = SignalVector::default();
    let mut latencies = std::collections::BTreeMap::new();

    let gen = match services.generate(q, SC_TEMPERATURES.0) {
        Ok(g) => g,
        Err(e) => return fail(q, "generate", e),
    };
    let (correct, source) = match services.label(q, &gen.text) {
        Ok(LabelOutcome::Labeled { correct, source }) => (correct, source),
        Ok(LabelOutcome::Excluded { reason }) => return fail(q, "label", reason),
        Err(reason) => return fail(q, "label", reason),
    };

    if wants(SignalName::Logprob) {
        match logprob_signal(&gen, &services.mapping) {
            Ok(v) => {
                signals.logprob = Some(v);
                latencies.insert(SignalName::Logprob.to_string(), gen.latency_ms);
            }
            Err(e) => return fail(q, "logprob", e),
        }
    }
    if wants(SignalName::Sc) {
        match services.generate(q, SC_TEMPERATURES.1) {
            Ok(second) => {
                signals.sc = Some(self_consistency(&gen, &second));
                latencies.insert(SignalName::Sc.to_string(), gen.latency_ms + second.latency_ms);
            }
            Err(e) => return fail(q, "sc", e),
        }
    }

    let needs_embedding = services.embedder.is_some()
        && (wants(SignalName::Ks)
            || wants(SignalName::RoutellmNm)
            || wants(SignalName::RoutellmPks)
            || (wants(SignalName::Gsa) && services.kb.is_some() && services.gsa.variant == GsaVariant::V3Conditional));
    let embedding = if needs_embedding {
        match services.embed(q) {
            Ok(e) => Some(e),
            Err(e) => return fail(q, "embed", e),
        }
    } else {
        None
    };
    let embed_ms = embedding.as_ref().map_or(0.0, |e| e.1);
    let embedding = embedding.map(|e| e.0);

    let mut kb_hits = None;
    if wants(SignalName::Gsa) {
        match services.gsa(q, embedding.as_deref()) {
            Ok((score, hits, ms)) => {
                signals.gsa = Some(score.value);
                let retrieval = if services.kb.is_some()
                    && embedding.is_some()
                    && services.gsa.variant == GsaVariant::V3Conditional
                {
                    kb_hits = Some(hits);
                    embed_ms
                } else {
                    0.0
                };
                latencies.insert(SignalName::Gsa.to_string(), ms + retrieval);
            }
            Err(e) => return fail(q, "gsa", e),
        }
    }
    let mut ks = None;
    if wants(SignalName::Ks) || wants(SignalName::RoutellmPks) {
        let Some(e) = embedding.as_deref() else {
            return fail(q, "ks", "no embedder configured");
        };
        match services.ks(e) {
            Ok(v) => ks = Some(v),
            Err(err) => return fail(q, "ks", err),
        }
        if wants(SignalName::Ks) {
            signals.ks = ks;
            latencies.insert(SignalName::Ks.to_string(), embed_ms);
        }
    }
    for name in [SignalName::RoutellmNm, SignalName::RoutellmPks] {
        if !wants(name) {
            continue;
        }
        let Some(e) = embedding.as_deref() else {
            return fail(q, name.as_str(), "no embedder configured");
        };
        match services.supervised(e, ks) {
            Ok((got, p)) if got == name => {
                signals.set(name, Some(p));
                latencies.insert(name.to_string(), embed_ms);
            }
            Ok((got, _)) => return fail(q, name.as_str(), format!("loaded model produces `{got}`")),
            Err(err) => return fail(q, name.as_str(), err),
        }
    }
    if signals.is_empty() {
        return fail(q, "signals", "no signal selected");
    }

    let mut record = EvalRecord {
        query_id: q.id.clone(),
        signals,
        local_correct: correct,
        label_source: source,
        latencies_ms: latencies,
        aux: None,
    };
    if !q.dataset.is_empty() {
        record.set_aux(AUX_DATASET, q.dataset.clone());
    }
    if let Some(h) = kb_hits {
        record.set_aux(AUX_KB_HITS, h as u64);
    }
    if cfg.label_cloud {
        let Some(cloud) = services.cloud.as_ref() else {
            return fail(q, "cloud", "no cloud backend configured");
        };
        let answer = match cloud.complete(&answer_prompt(q), 0.0) {
            Ok(a) => a,
            Err(e) => return fail(q, "cloud", e),
        };
        if let Ok(LabelOutcome::Labeled { correct, .. }) = services.label(q, &answer) {
            record.set_aux(AUX_CLOUD_CORRECT, correct);
        }
    }
    let features = embedding.map(|e| TrainingExample { query_id: q.id.clone(), embedding: e, ks, label: correct });
    Outcome::Done(Box::new(record), features)
}

/// Runs every query, `workers` at a time. Output order is by query id
/// regardless of completion order.
pub fn run_eval(services: &Services, queries: &[Query], cfg: &EvalRunConfig) -> EvalRun {
    use rayon::prelude::*;
    let work = || -> Vec<Outcome> { queries.par_iter().map(|q| evaluate_query(services, cfg, q)).collect() };
    let outcomes = match rayon::ThreadPoolBuilder::new().num_threads(cfg.workers.max(1)).build() {
        Ok(pool) => pool.install(work),
        Err(e) => {
            log::warn!("worker pool unavailable ({e}); running on the global pool");
            work()
        }
    };
    let mut run = EvalRun::default();
    for o in outcomes {
        match o {
            Outcome::Done(r, f) => {
                run.records.push(*r);
                run.features.extend(f);
            }
            Outcome::Failed(f) => {
                log::warn!("query `{}` failed at {}: {}", f.query_id, f.stage, f.reason);
                run.failures.push(f);
            }
        }
    }
    run.records.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    run.failures.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    run.features.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    run
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{MockBackend, MockEmbedder};
    use crate::records::{KbEntry, McqOption};

    fn queries() -> Vec<Query> {
        (0..12)
            .map(|i| {
                if i % 2 == 0 {
                    Query {
                        id: format!("q{i:02}"),
                        text: format!("Which planet is number {i}?"),
                        options: ["Mars", "Venus", "Earth", "Jupiter"]
                            .iter()
                            .zip(["A", "B", "C", "D"])
                            .map(|(t, l)| McqOption::new(l, *t))
                            .collect(),
                        gold: Some(Gold::Letter("B".into())),
                        dataset: "mcq".into(),
                        category: String::new(),
                    }
                } else {
                    Query {
                        id: format!("q{i:02}"),
                        text: format!("Who wrote book {i}?"),
                        options: vec![],
                        gold: Some(Gold::Aliases(vec!["Tolstoy".into()])),
                        dataset: "open".into(),
                        category: String::new(),
                    }
                }
            })
            .collect()
    }

    fn services() -> Services {
        let embedder = MockEmbedder::new(5, 16);
        let entries = ["planet facts", "famous books", "rivers"]
            .iter()
            .enumerate()
            .map(|(i, t)| KbEntry { id: format!("kb{i}"), text: t.to_string(), embedding: embedder.embed(t).unwrap() })
            .collect();
        let mut s = Services::new(Arc::new(MockBackend::with_seed(11)));
        s.cloud = Some(Arc::new(MockBackend::with_seed(12)));
        s.judge = Some(Arc::new(crate::backends::mock::MockJudge::seeded(13)));
        s.embedder = Some(Arc::new(embedder));
        s.kb = Some(Arc::new(KnowledgeIndex::build(entries).unwrap()));
        s
    }

    #[test]
    fn run_is_deterministic_and_sorted() {
        let s = services();
        let one = run_eval(&s, &queries(), &EvalRunConfig { workers: 1, label_cloud: true, ..Default::default() });
        let four = run_eval(&s, &queries(), &EvalRunConfig { workers: 4, label_cloud: true, ..Default::default() });
        assert_eq!(one.records, four.records);
        assert_eq!(one.failures, four.failures);
        assert_eq!(one.records.len() + one.failures.len(), 12);
        assert!(one.records.windows(2).all(|w| w[0].query_id < w[1].query_id));
        for r in &one.records {
            assert!(
                r.signals.logprob.is_some()
                    && r.signals.gsa.is_some()
                    && r.signals.sc.is_some()
                    && r.signals.ks.is_some()
            );
            assert!(r.aux_bool(AUX_CLOUD_CORRECT).is_some() || r.dataset() == "mcq");
        }
        assert_eq!(one.features.len(), one.records.len());
    }

    #[test]
    fn selection_leaves_other_slots_empty() {
        let cfg = EvalRunConfig {
            signals: [SignalName::Logprob, SignalName::Gsa].into_iter().collect(),
            ..Default::default()
        };
        let run = run_eval(&services(), &queries(), &cfg);
        assert!(!run.records.is_empty());
        for r in &run.records {
            assert!(r.signals.sc.is_none() && r.signals.ks.is_none());
            assert!(!r.latencies_ms.contains_key("sc"));
        }
    }

    #[test]
    fn missing_gold_is_a_recorded_failure() {
        let mut qs = queries();
        qs[1].gold = None;
        let mut s = services();
        s.judge = None;
        let run = run_eval(&s, &qs, &EvalRunConfig::default());
        let f = run.failures.iter().find(|f| f.query_id == "q01").unwrap();
        assert_eq!(f.stage, "label");
        assert!(run.failures.iter().all(|f| f.stage == "label"));
    }
}
