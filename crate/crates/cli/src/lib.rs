//! `confroute` command-line tool.
//!
//! Every command takes `--config` and `--seed` and writes a `manifest.json`
//! next to its outputs. Exit codes: 0 success, 1 usage error, 2 runtime
//! failure.

pub mod config;
pub mod manifest;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use confroute_core::evaluation::{report, BootstrapConfig, ReportOptions};
use confroute_core::harness::{run_eval, EvalRunConfig};
use confroute_core::records::{
    parse_signal_list, read_records, write_records, EvalRecord, FieldError, KbEntry, Query, Record, SignalName,
};
use confroute_core::rng::DEFAULT_SEED;
use confroute_core::router::{calibrate_threshold, Router};
use confroute_core::supervised::{
    learning_curve, predict, train_cv, FeatureRow, LearningCurve, TrainConfig, TrainingExample, Variant,
    DEFAULT_CURVE_SIZES,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{build_services, identities, Config, Needs};
use crate::manifest::RunManifest;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("backend unreachable, nothing was run: {0}")]
    Unreachable(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "confroute", version, about = "Confidence-gated local/cloud LLM routing and its evaluation harness")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluation runs and reports.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Train a supervised router.
    #[command(subcommand)]
    Train(TrainCommand),
    /// Held-out AUROC against training-set size.
    LearningCurve(CurveArgs),
    /// Threshold that escalates a target fraction of recorded queries.
    Calibrate(CalibrateArgs),
    /// Knowledge-base tools.
    #[command(subcommand)]
    Kb(KbCommand),
    /// Run the HTTP gateway.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Compute signals and labels for every query.
    Run(EvalRunArgs),
    /// Render the Markdown/CSV report for recorded runs.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
pub enum TrainCommand {
    /// Logistic regression over query embeddings (nm) or embeddings plus KS (pks).
    Routellm(TrainArgs),
}

#[derive(Debug, Subcommand)]
pub enum KbCommand {
    /// Embed `{id, text}` lines into a knowledge base file.
    Build(KbBuildArgs),
}

#[derive(Debug, Args)]
pub struct EvalRunArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated signals to compute.
    #[arg(long, default_value = "logprob,gsa,sc,ks")]
    pub signals: String,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Supervised model providing a routellm signal.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Also label the cloud model's answers (needs a cloud backend).
    #[arg(long)]
    pub label_cloud: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// One or more records files.
    #[arg(long, required = true, num_args = 1..)]
    pub records: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub learning_curve: Option<PathBuf>,
    /// Cloud-only accuracy for operating points; otherwise derived from
    /// per-query cloud labels when every record has one.
    #[arg(long)]
    pub cloud_accuracy: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
    #[arg(long, default_value = "logprob")]
    pub operating_signal: SignalName,
    #[arg(long, default_value = "Confidence signal evaluation")]
    pub title: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub variant: Variant,
    /// Training pool (features.jsonl).
    #[arg(long)]
    pub train: PathBuf,
    /// Held-out rows (features.jsonl).
    #[arg(long)]
    pub eval: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[arg(long)]
    pub variant: Variant,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub eval: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated training sizes. Sizes above the pool are skipped.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_CURVE_SIZES.to_vec())]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long, default_value = "logprob")]
    pub signal: SignalName,
    #[arg(long)]
    pub target_frac: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct KbBuildArgs {
    /// JSON lines of `{"id": ..., "text": ...}`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Overrides `[server].bind`.
    #[arg(long)]
    pub bind: Option<std::net::SocketAddr>,
    /// Directory for the run manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let seed = cli.seed;
    let config = match &cli.config {
        Some(p) => Some(Config::load(p)?),
        None => None,
    };
    let ctx = Ctx { seed, config_path: cli.config.clone(), config };
    match cli.command {
        Command::Eval(EvalCommand::Run(a)) => cmd_eval_run(&ctx, &a),
        Command::Eval(EvalCommand::Report(a)) => cmd_report(&ctx, &a),
        Command::Train(TrainCommand::Routellm(a)) => cmd_train(&ctx, &a),
        Command::LearningCurve(a) => cmd_learning_curve(&ctx, &a),
        Command::Calibrate(a) => cmd_calibrate(&ctx, &a),
        Command::Kb(KbCommand::Build(a)) => cmd_kb_build(&ctx, &a),
        Command::Serve(a) => cmd_serve(&ctx, &a),
    }
}

pub struct Ctx {
    pub seed: u64,
    pub config_path: Option<PathBuf>,
    pub config: Option<Config>,
}

impl Ctx {
    fn config(&self) -> Result<&Config, CliError> {
        self.config.as_ref().ok_or_else(|| CliError::Usage("this command needs --config".into()))
    }

    fn manifest(&self, command: &str) -> RunManifest {
        let mut m = RunManifest::start(command, self.seed);
        m.config_path = self.config_path.clone();
        if let Some(c) = &self.config {
            m.config = c.snapshot();
            m.kb_path = c.kb_path();
        }
        m
    }
}

fn out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn write_text(dir: &Path, name: &str, text: &str, manifest: &mut RunManifest) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    manifest.outputs.push(name.to_string());
    Ok(())
}

fn write_jsonl<T: Record>(dir: &Path, name: &str, rows: &[T], manifest: &mut RunManifest) -> Result<(), CliError> {
    write_records(dir.join(name), rows).map_err(|e| CliError::Runtime(e.to_string()))?;
    manifest.outputs.push(name.to_string());
    Ok(())
}

fn read<T: Record>(path: &Path) -> Result<Vec<T>, CliError> {
    if !path.exists() {
        return Err(CliError::Input(format!("{}: no such file", path.display())));
    }
    read_records(path).map_err(|e| CliError::Input(e.to_string()))
}

fn json_pretty<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value).map(|s| s + "\n").map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn cmd_eval_run(ctx: &Ctx, a: &EvalRunArgs) -> Result<(), CliError> {
    let cfg = ctx.config()?;
    let signals: BTreeSet<SignalName> =
        parse_signal_list(&a.signals).map_err(|e| CliError::Usage(e.to_string()))?.into_iter().collect();
    if signals.is_empty() {
        return Err(CliError::Usage("--signals selects nothing".into()));
    }
    if a.workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    let supervised = signals.contains(&SignalName::RoutellmNm) || signals.contains(&SignalName::RoutellmPks);
    if supervised && a.model.is_none() {
        return Err(CliError::Usage("routellm signals need --model".into()));
    }
    let queries: Vec<Query> = read(&a.queries)?;
    let needs = Needs {
        cloud: a.label_cloud,
        embedder: signals.contains(&SignalName::Ks) || supervised,
        kb: signals.contains(&SignalName::Ks) || signals.contains(&SignalName::RoutellmPks) || cfg.kb.is_some(),
    };
    let services = build_services(cfg, ctx.seed, needs, a.model.as_deref())?;

    let mut manifest = ctx.manifest("eval run");
    manifest.input("queries", &a.queries)?;
    if let Some(m) = &a.model {
        manifest.input("model", m)?;
    }
    if let Some(kb) = cfg.kb_path() {
        manifest.input("kb", &kb)?;
    }
    manifest.backends = identities(&services);
    manifest.setting("signals", &signals);
    manifest.setting("workers", a.workers);
    manifest.setting("label_cloud", a.label_cloud);

    let run = run_eval(&services, &queries, &EvalRunConfig { signals, workers: a.workers, label_cloud: a.label_cloud });
    log::info!("{} records, {} failures", run.records.len(), run.failures.len());
    out_dir(&a.out)?;
    write_jsonl(&a.out, "records.jsonl", &run.records, &mut manifest)?;
    write_jsonl(&a.out, "failures.jsonl", &run.failures, &mut manifest)?;
    if services.embedder.is_some() {
        write_jsonl(&a.out, "features.jsonl", &run.features, &mut manifest)?;
    }
    manifest.setting("records", run.records.len());
    manifest.setting("failures", run.failures.len());
    manifest.finish(&a.out)
}

pub fn cmd_report(ctx: &Ctx, a: &ReportArgs) -> Result<(), CliError> {
    let mut manifest = ctx.manifest("eval report");
    let mut records: Vec<EvalRecord> = Vec::new();
    for (i, path) in a.records.iter().enumerate() {
        records.extend(read::<EvalRecord>(path)?);
        manifest.input(&format!("records[{i}]"), path)?;
    }
    let curve = match &a.learning_curve {
        Some(p) => {
            manifest.input("learning_curve", p)?;
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            Some(
                serde_json::from_str::<LearningCurve>(&text)
                    .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?,
            )
        }
        None => None,
    };
    let opts = ReportOptions {
        title: a.title.clone(),
        bootstrap: BootstrapConfig { samples: a.bootstrap, seed: ctx.seed, ..Default::default() },
        cloud_accuracy: a.cloud_accuracy,
        operating_signal: a.operating_signal,
        learning_curve: curve,
        ..Default::default()
    };
    if let Some(c) = a.cloud_accuracy {
        if !(c > 0.0 && c <= 1.0) {
            return Err(CliError::Usage(format!("--cloud-accuracy {c} is outside (0, 1]")));
        }
    }
    let rendered = report(&records, &opts).map_err(|e| CliError::Runtime(e.to_string()))?;
    out_dir(&a.out)?;
    write_text(&a.out, "report.md", &rendered.markdown, &mut manifest)?;
    for (name, text) in &rendered.csv {
        write_text(&a.out, name, text, &mut manifest)?;
    }
    manifest.setting("bootstrap", opts.bootstrap);
    manifest.setting("operating_signal", a.operating_signal);
    manifest.finish(&a.out)
}

fn feature_rows(path: &Path, variant: Variant) -> Result<Vec<FeatureRow>, CliError> {
    read::<TrainingExample>(path)?
        .iter()
        .map(|e| {
            e.to_row(variant).map_err(|err| CliError::Input(format!("{}: `{}`: {err}", path.display(), e.query_id)))
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainSummary {
    variant: Variant,
    reg_strength: f64,
    train_rows: usize,
    eval_rows: usize,
    eval_auroc: f64,
}

pub fn cmd_train(ctx: &Ctx, a: &TrainArgs) -> Result<(), CliError> {
    let train = feature_rows(&a.train, a.variant)?;
    let eval = feature_rows(&a.eval, a.variant)?;
    let cfg = TrainConfig { folds: a.folds, seed: ctx.seed, ..Default::default() };
    let model = train_cv(&train, &cfg, a.variant).map_err(|e| CliError::Runtime(e.to_string()))?;
    let scores = eval
        .iter()
        .map(|r| predict(&model, &r.features))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Input(e.to_string()))?;
    let labels: Vec<bool> = eval.iter().map(|r| r.label).collect();
    let eval_auroc =
        confroute_core::evaluation::auroc(&scores, &labels).map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut manifest = ctx.manifest("train routellm");
    manifest.input("train", &a.train)?;
    manifest.input("eval", &a.eval)?;
    manifest.setting("variant", a.variant);
    manifest.setting("folds", a.folds);
    manifest.setting("reg_grid", &cfg.reg_grid);
    out_dir(&a.out)?;
    let model_text = model.to_json().map_err(|e| CliError::Runtime(e.to_string()))?;
    write_text(&a.out, "model.json", &model_text, &mut manifest)?;
    let summary = TrainSummary {
        variant: a.variant,
        reg_strength: model.reg_strength,
        train_rows: train.len(),
        eval_rows: eval.len(),
        eval_auroc,
    };
    write_text(&a.out, "train.json", &json_pretty(&summary)?, &mut manifest)?;
    println!("routellm_{}: reg_strength {} held-out AUROC {:.3}", a.variant.as_str(), model.reg_strength, eval_auroc);
    manifest.finish(&a.out)
}

pub fn cmd_learning_curve(ctx: &Ctx, a: &CurveArgs) -> Result<(), CliError> {
    let pool = feature_rows(&a.train, a.variant)?;
    let eval = feature_rows(&a.eval, a.variant)?;
    let (sizes, skipped): (Vec<usize>, Vec<usize>) = a.sizes.iter().partition(|&&s| s <= pool.len());
    for s in &skipped {
        log::warn!("size {s} exceeds the pool of {} rows; skipped", pool.len());
    }
    if sizes.is_empty() {
        return Err(CliError::Input(format!("no requested size fits the pool of {} rows", pool.len())));
    }
    let cfg = TrainConfig { folds: a.folds, seed: ctx.seed, ..Default::default() };
    let curve = learning_curve(&pool, &sizes, &eval, &cfg, a.variant).map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut manifest = ctx.manifest("learning-curve");
    manifest.input("train", &a.train)?;
    manifest.input("eval", &a.eval)?;
    manifest.setting("variant", a.variant);
    manifest.setting("sizes", &sizes);
    manifest.setting("skipped_sizes", &skipped);
    out_dir(&a.out)?;
    write_text(&a.out, "learning_curve.json", &json_pretty(&curve)?, &mut manifest)?;
    let mut csv = String::from("train_size,auroc\n");
    for p in &curve.points {
        csv.push_str(&format!("{},{:.3}\n", p.size, p.auroc));
    }
    write_text(&a.out, "learning_curve.csv", &csv, &mut manifest)?;
    manifest.finish(&a.out)
}

#[derive(Debug, Serialize, Deserialize)]
struct Calibration {
    signal: SignalName,
    target_frac: f64,
    theta: f64,
    records: usize,
    escalated: usize,
}

pub fn cmd_calibrate(ctx: &Ctx, a: &CalibrateArgs) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&a.target_frac) {
        return Err(CliError::Usage(format!("--target-frac {} is outside [0, 1]", a.target_frac)));
    }
    let records: Vec<EvalRecord> = read(&a.records)?;
    let theta = calibrate_threshold(&records, a.signal, a.target_frac).map_err(|e| CliError::Runtime(e.to_string()))?;
    let scored: Vec<f64> = records.iter().filter_map(|r| r.signals.get(a.signal)).collect();
    let escalated = scored.iter().filter(|&&s| confroute_core::router::below(s, theta)).count();
    let mut manifest = ctx.manifest("calibrate");
    manifest.input("records", &a.records)?;
    manifest.setting("signal", a.signal);
    manifest.setting("target_frac", a.target_frac);
    out_dir(&a.out)?;
    let c = Calibration { signal: a.signal, target_frac: a.target_frac, theta, records: scored.len(), escalated };
    write_text(&a.out, "calibration.json", &json_pretty(&c)?, &mut manifest)?;
    println!("{theta}");
    manifest.finish(&a.out)
}

/// One line of `kb build` input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbText {
    pub id: String,
    pub text: String,
}

impl Record for KbText {
    const KIND: &'static str = "kb text";

    fn validate(&self) -> Result<(), FieldError> {
        if self.id.is_empty() {
            return Err(FieldError::new("id", "must be non-empty"));
        }
        if self.text.trim().is_empty() {
            return Err(FieldError::new("text", "must be non-empty"));
        }
        Ok(())
    }

    fn unique_key(&self) -> Option<&str> {
        Some(&self.id)
    }
}

pub fn cmd_kb_build(ctx: &Ctx, a: &KbBuildArgs) -> Result<(), CliError> {
    let cfg = ctx.config()?;
    let texts: Vec<KbText> = read(&a.input)?;
    let services = build_services(cfg, ctx.seed, Needs { embedder: true, ..Default::default() }, None)?;
    let embedder = services.embedder.as_ref().expect("embedder required above");
    let mut entries = Vec::with_capacity(texts.len());
    for t in &texts {
        let embedding = embedder.embed(&t.text).map_err(|e| CliError::Runtime(format!("`{}`: {e}", t.id)))?;
        entries.push(KbEntry { id: t.id.clone(), text: t.text.clone(), embedding });
    }
    let mut manifest = ctx.manifest("kb build");
    manifest.input("input", &a.input)?;
    manifest.backends = identities(&services);
    out_dir(&a.out)?;
    write_jsonl(&a.out, "kb.jsonl", &entries, &mut manifest)?;
    manifest.finish(&a.out)
}

pub fn cmd_serve(ctx: &Ctx, a: &ServeArgs) -> Result<(), CliError> {
    let cfg = ctx.config()?;
    let model = a.model.clone().or_else(|| cfg.policy.model_ref.as_ref().map(|p| cfg.resolve(p)));
    let needs = Needs { cloud: true, embedder: false, kb: cfg.kb.is_some() };
    let services = build_services(cfg, ctx.seed, needs, model.as_deref())?;
    let server =
        cfg.server.clone().unwrap_or(config::ServerSection { bind: ([127, 0, 0, 1], 8080).into(), log_path: None });
    let bind = a.bind.unwrap_or(server.bind);
    let log_path = server.log_path.map(|p| cfg.resolve(&p));
    let backends = identities(&services);
    let router = Router::new(services, cfg.policy.clone()).map_err(|e| CliError::Input(e.to_string()))?;
    let state = confroute_gateway::AppState::new(router, log_path.as_deref())
        .map_err(|e| CliError::Unreachable(e.to_string()))?;
    if let Some(dir) = &a.out {
        let mut manifest = ctx.manifest("serve");
        manifest.backends = backends;
        manifest.setting("bind", bind.to_string());
        out_dir(dir)?;
        manifest.finish(dir)?;
    }
    confroute_gateway::serve(state, bind).map_err(|e| CliError::Runtime(e.to_string()))
}
