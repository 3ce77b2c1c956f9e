//! TOML run configuration.
//!
//! ```toml
//! [local]
//! kind = "mock"            # or "http" with endpoint, model, api_key_env, ...
//! [cloud]
//! kind = "http"
//! endpoint = "https://api.example.com/v1/chat/completions"
//! model = "big-model"
//! api = "chat"
//! api_key_env = "CLOUD_API_KEY"
//! [embedder]
//! kind = "mock"
//! dim = 64
//! [judge]
//! kind = "mock"
//! [policy]
//! mode = "two_stage"
//! theta_pre = 0.5
//! theta_post = 0.5
//! [gsa]
//! tau = 0.7
//! [kb]
//! path = "kb.jsonl"
//! [server]
//! bind = "127.0.0.1:8080"
//! log_path = "requests.jsonl"
//! ```
//!
//! Relative paths resolve against the config file's directory. Credentials
//! are only ever read from the environment variable named by `api_key_env`.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use confroute_core::backends::http::{HttpBackend, HttpEmbedder};
use confroute_core::backends::mock::{MockBackend, MockConfig, MockEmbedder, MockJudge};
use confroute_core::backends::{Backend, BackendConfig, Embedder, Judge, LlmJudge};
use confroute_core::harness::Services;
use confroute_core::kb::KnowledgeIndex;
use confroute_core::records::{read_records, KbEntry};
use confroute_core::rng::{self, Rng, Stream};
use confroute_core::router::RoutingPolicy;
use confroute_core::signals::{GsaConfig, LogprobMapping};
use confroute_core::supervised::LogRegModel;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSpec {
    Mock(MockConfig),
    Http(BackendConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbedderSpec {
    Mock {
        #[serde(default)]
        seed: u64,
        dim: usize,
        #[serde(default)]
        delay_ms: u64,
    },
    Http {
        #[serde(flatten)]
        backend: BackendConfig,
        dim: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum JudgeSpec {
    /// Fixed reply when `reply` is set, seeded verdicts otherwise.
    Mock {
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        reply: Option<String>,
    },
    Http(BackendConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KbSection {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSection {
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    #[serde(default)]
    pub log_path: Option<PathBuf>,
}

fn default_bind() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub local: Option<BackendSpec>,
    pub cloud: Option<BackendSpec>,
    pub embedder: Option<EmbedderSpec>,
    pub judge: Option<JudgeSpec>,
    #[serde(default)]
    pub policy: RoutingPolicy,
    #[serde(default)]
    pub gsa: GsaConfig,
    #[serde(default)]
    pub logprob: LogprobMapping,
    pub kb: Option<KbSection>,
    pub server: Option<ServerSection>,
    /// Directory relative paths resolve against; set on load.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Parses config text without touching the filesystem.
pub fn parse_config(text: &str) -> Result<Config, String> {
    let cfg: Config = toml::from_str(text).map_err(|e| e.to_string())?;
    cfg.policy.validate().map_err(|e| e.to_string())?;
    cfg.gsa.validate().map_err(|e| e.to_string())?;
    cfg.logprob.validate().map_err(|e| e.to_string())?;
    for spec in [&cfg.local, &cfg.cloud].into_iter().flatten() {
        if let BackendSpec::Http(b) = spec {
            b.validate().map_err(|e| e.to_string())?;
        }
    }
    if let Some(JudgeSpec::Http(b)) = &cfg.judge {
        b.validate().map_err(|e| e.to_string())?;
    }
    match &cfg.embedder {
        Some(EmbedderSpec::Mock { dim: 0, .. } | EmbedderSpec::Http { dim: 0, .. }) => {
            return Err("embedder dim must be > 0".into());
        }
        Some(EmbedderSpec::Http { backend, .. }) => backend.validate().map_err(|e| e.to_string())?,
        _ => {}
    }
    Ok(cfg)
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let mut cfg = parse_config(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn kb_path(&self) -> Option<PathBuf> {
        self.kb.as_ref().map(|k| self.resolve(&k.path))
    }

    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}

/// Mock seeds: the configured seed mixed with a per-role draw from the run
/// seed, so one `--seed` moves every simulated backend.
struct MockSeeds {
    local: u64,
    cloud: u64,
    judge: u64,
    embedder: u64,
}

impl MockSeeds {
    fn new(seed: u64) -> Self {
        let mut r = rng::stream(seed, Stream::Mock);
        Self { local: r.gen(), cloud: r.gen(), judge: r.gen(), embedder: r.gen() }
    }
}

fn backend(spec: &BackendSpec, role_seed: u64) -> Result<Arc<dyn Backend>, CliError> {
    Ok(match spec {
        BackendSpec::Mock(m) => Arc::new(MockBackend::new(MockConfig { seed: m.seed ^ role_seed, ..m.clone() })),
        BackendSpec::Http(b) => Arc::new(HttpBackend::new(b.clone()).map_err(|e| CliError::Input(e.to_string()))?),
    })
}

/// Which optional pieces a command needs.
#[derive(Debug, Clone, Copy, Default)]
pub struct Needs {
    pub cloud: bool,
    pub embedder: bool,
    pub kb: bool,
}

/// Builds the backends and loads shared state, then checks that every
/// backend answers before any work starts.
pub fn build_services(cfg: &Config, seed: u64, needs: Needs, model: Option<&Path>) -> Result<Services, CliError> {
    let seeds = MockSeeds::new(seed);
    let local = cfg.local.as_ref().ok_or_else(|| CliError::Input("config has no [local] backend".into()))?;
    let mut s = Services::new(backend(local, seeds.local)?);
    s.gsa = cfg.gsa;
    s.mapping = cfg.logprob;
    if let Some(c) = &cfg.cloud {
        s.cloud = Some(backend(c, seeds.cloud)?);
    } else if needs.cloud {
        return Err(CliError::Input("config has no [cloud] backend".into()));
    }
    s.judge = match &cfg.judge {
        Some(JudgeSpec::Mock { reply: Some(r), .. }) => Some(Arc::new(MockJudge::fixed(r.clone())) as Arc<dyn Judge>),
        Some(JudgeSpec::Mock { seed: js, reply: None }) => {
            Some(Arc::new(MockJudge::seeded(js ^ seeds.judge)) as Arc<dyn Judge>)
        }
        Some(JudgeSpec::Http(b)) => {
            let backend = HttpBackend::new(b.clone()).map_err(|e| CliError::Input(e.to_string()))?;
            backend.health().map_err(|e| CliError::Unreachable(format!("judge: {e}")))?;
            Some(Arc::new(LlmJudge::new(backend)) as Arc<dyn Judge>)
        }
        None => None,
    };
    s.embedder = match &cfg.embedder {
        Some(EmbedderSpec::Mock { seed: es, dim, delay_ms }) => {
            Some(Arc::new(MockEmbedder::new(es ^ seeds.embedder, *dim).with_delay(*delay_ms)) as Arc<dyn Embedder>)
        }
        Some(EmbedderSpec::Http { backend, dim }) => {
            Some(Arc::new(HttpEmbedder::new(backend.clone(), *dim).map_err(|e| CliError::Input(e.to_string()))?)
                as Arc<dyn Embedder>)
        }
        None if needs.embedder => return Err(CliError::Input("config has no [embedder]".into())),
        None => None,
    };
    if let Some(path) = cfg.kb_path() {
        if needs.kb {
            let entries: Vec<KbEntry> = read_records(&path).map_err(|e| CliError::Input(e.to_string()))?;
            let index =
                KnowledgeIndex::build(entries).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            if let Some(e) = &s.embedder {
                if e.dim() != index.dim() {
                    return Err(CliError::Input(format!(
                        "knowledge base dimension {} differs from embedder dimension {}",
                        index.dim(),
                        e.dim()
                    )));
                }
            }
            s.kb = Some(Arc::new(index));
        }
    } else if needs.kb {
        return Err(CliError::Input("config has no [kb] path".into()));
    }
    if let Some(path) = model {
        let m = LogRegModel::load(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        s.model = Some(Arc::new(m));
    }
    check_health(&s)?;
    Ok(s)
}

fn check_health(s: &Services) -> Result<(), CliError> {
    s.local.health().map_err(|e| CliError::Unreachable(format!("local: {e}")))?;
    if let Some(c) = &s.cloud {
        c.health().map_err(|e| CliError::Unreachable(format!("cloud: {e}")))?;
    }
    if let Some(e) = &s.embedder {
        e.health().map_err(|err| CliError::Unreachable(format!("embedder: {err}")))?;
    }
    Ok(())
}

/// Identity strings for the manifest.
pub fn identities(s: &Services) -> std::collections::BTreeMap<String, String> {
    let mut m = std::collections::BTreeMap::new();
    m.insert("local".into(), s.local.identity());
    if let Some(c) = &s.cloud {
        m.insert("cloud".into(), c.identity());
    }
    if let Some(e) = &s.embedder {
        m.insert("embedder".into(), e.identity());
    }
    if s.judge.is_some() {
        m.insert("judge".into(), "configured".into());
    }
    m
}
