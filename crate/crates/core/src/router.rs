//! Local-versus-cloud routing: policies, the per-query routing flow, a pure
//! replay of routing decisions from recorded signals, and threshold
//! calibration.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendError;
use crate::evaluation::quantile;
use crate::harness::{measure, Services};
use crate::prompts::answer_prompt;
use crate::records::{
    EvalRecord, Generation, LabelSource, Query, SignalName, SignalVector, AUX_DATASET, AUX_UNLABELED,
};
use crate::signals::{logprob_signal, self_consistency, LogprobMapping, SignalError, SC_TEMPERATURES};

pub const FLAG_PRE_SIGNAL_FAILED: &str = "pre_signal_failed";
pub const FLAG_POST_SIGNAL_FAILED: &str = "post_signal_failed";
pub const FLAG_EMPTY_GENERATION: &str = "empty_generation";

/// Stage names used as latency keys.
pub const STAGE_PRE: &str = "pre";
pub const STAGE_LOCAL: &str = "local";
pub const STAGE_POST: &str = "post";
pub const STAGE_CLOUD: &str = "cloud";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    PostOnly,
    PreOnly,
    #[default]
    TwoStage,
    Supervised,
}

/// What to do when a confidence signal cannot be computed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnSignalFailure {
    /// Answer locally and flag the outcome.
    #[default]
    FailOpen,
    /// Escalate.
    FailClosed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoutingPolicy {
    pub mode: Mode,
    pub theta_pre: f64,
    pub theta_post: f64,
    pub signal_pre: SignalName,
    pub signal_post: SignalName,
    /// Supervised model file; required in supervised mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_ref: Option<PathBuf>,
    pub on_signal_failure: OnSignalFailure,
    /// Escalate when the local model returns no tokens.
    pub escalate_on_empty: bool,
}

impl Default for RoutingPolicy {
    fn default() -> Self {
        Self {
            mode: Mode::TwoStage,
            theta_pre: 0.5,
            theta_post: 0.5,
            signal_pre: SignalName::Gsa,
            signal_post: SignalName::Logprob,
            model_ref: None,
            on_signal_failure: OnSignalFailure::FailOpen,
            escalate_on_empty: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum RouteError {
    #[error("invalid routing policy: {0}")]
    Policy(String),
    #[error("local backend: {0}")]
    Local(#[source] BackendError),
    #[error("signal computation: {0}")]
    Signal(#[from] SignalError),
    /// Escalation was decided but the cloud model could not answer. Carries
    /// whatever the local side produced so the caller can fall back.
    #[error("cloud backend unavailable: {reason}")]
    CloudUnavailable { reason: String, local_answer: Option<String>, signals: Box<SignalVector> },
}

/// Largest accepted threshold: calibrating at target 1 returns the next
/// float above the maximum score, which exceeds 1 when that maximum is 1.
fn theta_ceiling() -> f64 {
    1.0f64.next_up()
}

impl RoutingPolicy {
    pub fn validate(&self) -> Result<(), RouteError> {
        for (name, theta) in [("theta_pre", self.theta_pre), ("theta_post", self.theta_post)] {
            if !(0.0..=theta_ceiling()).contains(&theta) {
                return Err(RouteError::Policy(format!("{name} = {theta} is outside [0, 1]")));
            }
        }
        if !matches!(self.signal_pre, SignalName::Gsa | SignalName::Ks) {
            return Err(RouteError::Policy(format!("signal_pre must be gsa or ks, got {}", self.signal_pre)));
        }
        if !matches!(self.signal_post, SignalName::Logprob | SignalName::Sc) {
            return Err(RouteError::Policy(format!("signal_post must be logprob or sc, got {}", self.signal_post)));
        }
        if self.mode == Mode::Supervised && self.model_ref.is_none() {
            return Err(RouteError::Policy("supervised mode requires model_ref".into()));
        }
        Ok(())
    }

    fn has_pre(&self) -> bool {
        matches!(self.mode, Mode::PreOnly | Mode::TwoStage | Mode::Supervised)
    }

    fn has_post(&self) -> bool {
        matches!(self.mode, Mode::PostOnly | Mode::TwoStage)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Local,
    Cloud,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteOutcome {
    pub answer: String,
    pub source: Source,
    pub signals: SignalVector,
    /// A local answer was generated and then discarded for the cloud's.
    pub wasted_local_generation: bool,
    /// Stage name to milliseconds.
    pub latencies_ms: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl RouteOutcome {
    /// The outcome as an evaluation row flagged unlabeled, so gateway logs
    /// can be re-read as records. `None` when no signal was computed.
    pub fn to_log_record(&self, q: &Query) -> Option<EvalRecord> {
        if self.signals.is_empty() {
            return None;
        }
        let mut r = EvalRecord {
            query_id: q.id.clone(),
            signals: self.signals.clone(),
            local_correct: false,
            label_source: LabelSource::Manual,
            latencies_ms: self.latencies_ms.clone(),
            aux: None,
        };
        r.set_aux(AUX_UNLABELED, true);
        if !q.dataset.is_empty() {
            r.set_aux(AUX_DATASET, q.dataset.clone());
        }
        r.set_aux("source", if self.source == Source::Local { "local" } else { "cloud" });
        r.set_aux("wasted_local_generation", self.wasted_local_generation);
        if !self.flags.is_empty() {
            r.set_aux("flags", self.flags.clone());
        }
        Some(r)
    }
}

/// Escalation rule shared by both stages: scores strictly below the
/// threshold escalate.
pub fn below(score: f64, theta: f64) -> bool {
    score < theta
}

/// Post-generation decision on the logprob signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostDecision {
    pub escalate: bool,
    pub score: Option<f64>,
    pub empty: bool,
}

pub fn decide_post(gen: &Generation, policy: &RoutingPolicy, mapping: &LogprobMapping) -> PostDecision {
    match logprob_signal(gen, mapping) {
        Ok(score) => PostDecision { escalate: below(score, policy.theta_post), score: Some(score), empty: false },
        Err(_) => PostDecision { escalate: policy.escalate_on_empty, score: None, empty: true },
    }
}

/// Replays a routing decision from recorded signals and flags. Routing is a
/// pure function of these plus the policy, so this agrees with the live
/// router for every outcome it produced.
pub fn replay_decision(
    signals: &SignalVector,
    flags: &[String],
    policy: &RoutingPolicy,
    supervised: Option<SignalName>,
) -> Source {
    let on_failure = policy.on_signal_failure == OnSignalFailure::FailClosed;
    let escalate = |s: bool| if s { Source::Cloud } else { Source::Local };
    if policy.has_pre() {
        let name = if policy.mode == Mode::Supervised {
            supervised.unwrap_or(SignalName::RoutellmNm)
        } else {
            policy.signal_pre
        };
        match signals.get(name) {
            Some(v) if below(v, policy.theta_pre) => return Source::Cloud,
            Some(_) => {}
            None if on_failure => return Source::Cloud,
            None => {}
        }
    }
    if policy.has_post() {
        if flags.iter().any(|f| f == FLAG_EMPTY_GENERATION) {
            return escalate(policy.escalate_on_empty);
        }
        return match signals.get(policy.signal_post) {
            Some(v) => escalate(below(v, policy.theta_post)),
            None => escalate(on_failure),
        };
    }
    Source::Local
}

#[derive(Debug, Error, PartialEq)]
pub enum CalibrateError {
    #[error("no records carry the `{0}` signal")]
    Empty(SignalName),
    #[error("target fraction {0} is outside [0, 1]")]
    TargetFrac(f64),
}

/// Threshold whose strict-below rule escalates about `target_frac` of the
/// recorded queries: the linear-interpolation quantile of the signal, or the
/// next float above the maximum when the target is 1.
pub fn calibrate_threshold(
    records: &[EvalRecord],
    signal: SignalName,
    target_frac: f64,
) -> Result<f64, CalibrateError> {
    if !(0.0..=1.0).contains(&target_frac) {
        return Err(CalibrateError::TargetFrac(target_frac));
    }
    let mut scores: Vec<f64> = records.iter().filter_map(|r| r.signals.get(signal)).collect();
    if scores.is_empty() {
        return Err(CalibrateError::Empty(signal));
    }
    scores.sort_by(f64::total_cmp);
    if target_frac == 1.0 {
        return Ok(scores[scores.len() - 1].next_up());
    }
    Ok(quantile(&scores, target_frac))
}

pub struct Router {
    services: Services,
    policy: RoutingPolicy,
}

/// Result of the pre-generation stage.
#[derive(Debug, Clone, PartialEq)]
pub struct PreDecision {
    pub escalate: bool,
    pub signal: SignalName,
    /// `None` when the signal failed.
    pub score: Option<f64>,
    pub latency_ms: f64,
}

impl Router {
    pub fn new(services: Services, policy: RoutingPolicy) -> Result<Self, RouteError> {
        policy.validate()?;
        if policy.mode == Mode::Supervised && services.model.is_none() {
            return Err(RouteError::Policy("supervised mode needs a loaded model".into()));
        }
        if policy.has_pre()
            && policy.mode != Mode::Supervised
            && policy.signal_pre == SignalName::Ks
            && (services.embedder.is_none() || services.kb.is_none())
        {
            return Err(RouteError::Policy("ks pre-filter needs an embedder and a knowledge base".into()));
        }
        Ok(Self { services, policy })
    }

    pub fn policy(&self) -> &RoutingPolicy {
        &self.policy
    }

    pub fn services(&self) -> &Services {
        &self.services
    }

    fn pre_score(&self, q: &Query) -> Result<(SignalName, f64, f64), SignalError> {
        let s = &self.services;
        if self.policy.mode == Mode::Supervised {
            let (embedding, embed_ms) = s.embed(q)?;
            let ks = match s.kb {
                Some(_) => Some(s.ks(&embedding)?),
                None => None,
            };
            let (name, p) = s.supervised(&embedding, ks)?;
            return Ok((name, p, embed_ms));
        }
        match self.policy.signal_pre {
            SignalName::Ks => {
                let (embedding, ms) = s.embed(q)?;
                Ok((SignalName::Ks, s.ks(&embedding)?, ms))
            }
            _ => {
                let (embedding, embed_ms) = match (&s.embedder, &s.kb) {
                    (Some(_), Some(_)) => {
                        let (e, ms) = s.embed(q)?;
                        (Some(e), ms)
                    }
                    _ => (None, 0.0),
                };
                let (score, _, ms) = s.gsa(q, embedding.as_deref())?;
                Ok((SignalName::Gsa, score.value, ms + embed_ms))
            }
        }
    }

    /// Pre-generation filter: escalate when the pre signal is strictly below
    /// `theta_pre`. Signal failures follow the policy's failure mode.
    pub fn decide_pre(&self, q: &Query) -> PreDecision {
        let signal = self.policy.signal_pre;
        match self.pre_score(q) {
            Ok((name, score, latency_ms)) => PreDecision {
                escalate: below(score, self.policy.theta_pre),
                signal: name,
                score: Some(score),
                latency_ms,
            },
            Err(e) => {
                log::warn!("pre-stage signal failed: {e}");
                PreDecision {
                    escalate: self.policy.on_signal_failure == OnSignalFailure::FailClosed,
                    signal,
                    score: None,
                    latency_ms: 0.0,
                }
            }
        }
    }

    fn escalate(
        &self,
        q: &Query,
        mut outcome: RouteOutcome,
        local_answer: Option<String>,
    ) -> Result<RouteOutcome, RouteError> {
        let unavailable = |reason: String, signals: SignalVector| RouteError::CloudUnavailable {
            reason,
            local_answer: local_answer.clone(),
            signals: Box::new(signals),
        };
        let Some(cloud) = self.services.cloud.as_ref() else {
            return Err(unavailable("no cloud backend configured".into(), outcome.signals));
        };
        let prompt = answer_prompt(q);
        match measure(|| cloud.complete(&prompt, 0.0), |text| cloud.simulated_complete_ms(text)) {
            Ok((answer, ms)) => {
                outcome.latencies_ms.insert(STAGE_CLOUD.into(), ms);
                outcome.wasted_local_generation = local_answer.is_some();
                outcome.answer = answer;
                outcome.source = Source::Cloud;
                Ok(outcome)
            }
            Err(e) => Err(unavailable(e.to_string(), outcome.signals)),
        }
    }

    pub fn route(&self, q: &Query) -> Result<RouteOutcome, RouteError> {
        let p = &self.policy;
        let mut outcome = RouteOutcome {
            answer: String::new(),
            source: Source::Local,
            signals: SignalVector::default(),
            wasted_local_generation: false,
            latencies_ms: BTreeMap::new(),
            flags: Vec::new(),
        };

        if p.has_pre() {
            let pre = self.decide_pre(q);
            match pre.score {
                Some(score) => {
                    outcome.signals.set(pre.signal, Some(score));
                    outcome.latencies_ms.insert(STAGE_PRE.into(), pre.latency_ms);
                }
                None => outcome.flags.push(FLAG_PRE_SIGNAL_FAILED.into()),
            }
            if pre.escalate {
                return self.escalate(q, outcome, None);
            }
        }

        let gen = match self.services.generate(q, SC_TEMPERATURES.0) {
            Ok(g) => Some(g),
            Err(SignalError::EmptyGeneration) => None,
            Err(SignalError::Backend(e)) => return Err(RouteError::Local(e)),
            Err(e) => return Err(e.into()),
        };
        let Some(gen) = gen else {
            outcome.flags.push(FLAG_EMPTY_GENERATION.into());
            if p.has_post() && p.escalate_on_empty {
                return self.escalate(q, outcome, Some(String::new()));
            }
            return Ok(outcome);
        };
        outcome.latencies_ms.insert(STAGE_LOCAL.into(), gen.latency_ms);
        outcome.answer = gen.text.clone();

        if p.has_post() {
            let post = match p.signal_post {
                SignalName::Sc => self
                    .services
                    .generate(q, SC_TEMPERATURES.1)
                    .map(|second| (self_consistency(&gen, &second), second.latency_ms)),
                _ => logprob_signal(&gen, &self.services.mapping).map(|v| (v, 0.0)),
            };
            let escalate = match post {
                Ok((score, ms)) => {
                    outcome.signals.set(p.signal_post, Some(score));
                    outcome.latencies_ms.insert(STAGE_POST.into(), ms);
                    below(score, p.theta_post)
                }
                Err(e) => {
                    log::warn!("post-stage signal failed: {e}");
                    outcome.flags.push(FLAG_POST_SIGNAL_FAILED.into());
                    p.on_signal_failure == OnSignalFailure::FailClosed
                }
            };
            if escalate {
                let local = Some(gen.text);
                return self.escalate(q, outcome, local);
            }
        }
        Ok(outcome)
    }

    /// Every available signal for a query, without routing.
    pub fn signals(&self, q: &Query) -> Result<(SignalVector, BTreeMap<String, f64>), RouteError> {
        let s = &self.services;
        let mut v = SignalVector::default();
        let mut lat = BTreeMap::new();
        let gen = s.generate(q, SC_TEMPERATURES.0).map_err(|e| match e {
            SignalError::Backend(b) => RouteError::Local(b),
            other => other.into(),
        })?;
        v.logprob = Some(logprob_signal(&gen, &s.mapping)?);
        lat.insert(SignalName::Logprob.to_string(), gen.latency_ms);
        let second = s.generate(q, SC_TEMPERATURES.1)?;
        v.sc = Some(self_consistency(&gen, &second));
        lat.insert(SignalName::Sc.to_string(), gen.latency_ms + second.latency_ms);
        let embedding = match &s.embedder {
            Some(_) => Some(s.embed(q)?),
            None => None,
        };
        let with_kb = embedding.as_ref().filter(|_| s.kb.is_some());
        let (gsa, _, gsa_ms) = s.gsa(q, with_kb.map(|e| e.0.as_slice()))?;
        v.gsa = Some(gsa.value);
        lat.insert(SignalName::Gsa.to_string(), gsa_ms + with_kb.map_or(0.0, |e| e.1));
        if let Some((e, ms)) = &with_kb {
            v.ks = Some(s.ks(e)?);
            lat.insert(SignalName::Ks.to_string(), *ms);
        }
        if let (Some(_), Some((e, ms))) = (&s.model, &embedding) {
            let (name, p) = s.supervised(e, v.ks)?;
            v.set(name, Some(p));
            lat.insert(name.to_string(), *ms);
        }
        Ok((v, lat))
    }
}
