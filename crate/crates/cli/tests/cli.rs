use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_confroute");

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn confroute")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "confroute {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Temp dir holding a copy of the mock config plus a built knowledge base.
fn workspace() -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("mock.toml");
    fs::copy(fixtures().join("mock.toml"), &cfg).unwrap();
    let cfg = cfg.to_str().unwrap().to_string();
    let kb_out = dir.path().join("kb");
    ok(&[
        "--config",
        &cfg,
        "kb",
        "build",
        "--input",
        fixtures().join("kb_texts.jsonl").to_str().unwrap(),
        "--out",
        kb_out.to_str().unwrap(),
    ]);
    (dir, cfg)
}

fn eval_run(cfg: &str, out: &Path, extra: &[&str]) {
    let queries = fixtures().join("queries.jsonl");
    let mut args =
        vec!["--config", cfg, "eval", "run", "--queries", queries.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    ok(&args);
}

fn report(records: &Path, out: &Path) {
    ok(&["eval", "report", "--records", records.to_str().unwrap(), "--out", out.to_str().unwrap()]);
}

const GOLDEN_FILES: &[(&str, &str)] = &[
    ("run", "records.jsonl"),
    ("run", "failures.jsonl"),
    ("report", "report.md"),
    ("report", "auroc.csv"),
    ("report", "paired_deltas.csv"),
    ("report", "transfer.csv"),
    ("report", "fusion.csv"),
    ("report", "latency.csv"),
    ("report", "operating_points.csv"),
];

#[test]
fn end_to_end_matches_golden() {
    let (dir, cfg) = workspace();
    let run_dir = dir.path().join("run");
    let report_dir = dir.path().join("report");
    eval_run(&cfg, &run_dir, &["--label-cloud", "--workers", "4"]);
    report(&run_dir.join("records.jsonl"), &report_dir);

    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    if update {
        fs::create_dir_all(golden_dir()).unwrap();
    }
    for (sub, name) in GOLDEN_FILES {
        let got = fs::read_to_string(dir.path().join(sub).join(name)).unwrap();
        let path = golden_dir().join(name);
        if update {
            fs::write(&path, &got).unwrap();
        } else {
            let want = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert!(got == want, "{name} differs from golden; rerun with UPDATE_GOLDEN=1 after review");
        }
    }
}

#[test]
fn worker_count_does_not_change_outputs() {
    let (dir, cfg) = workspace();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    eval_run(&cfg, &a, &["--workers", "1"]);
    eval_run(&cfg, &b, &["--workers", "8"]);
    for name in ["records.jsonl", "failures.jsonl", "features.jsonl"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn seed_moves_mock_outputs() {
    let (dir, cfg) = workspace();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    eval_run(&cfg, &a, &[]);
    eval_run(&cfg, &b, &["--seed", "7"]);
    assert_ne!(fs::read(a.join("records.jsonl")).unwrap(), fs::read(b.join("records.jsonl")).unwrap());
}

#[test]
fn signal_subset_leaves_others_absent() {
    let (dir, cfg) = workspace();
    let out = dir.path().join("run");
    eval_run(&cfg, &out, &["--signals", "logprob,gsa"]);
    let text = fs::read_to_string(out.join("records.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 100);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let signals = v["signals"].as_object().unwrap();
        let keys: Vec<&str> = signals.keys().map(String::as_str).collect();
        assert_eq!(keys, ["gsa", "logprob"]);
        assert!(v["latencies_ms"].get("sc").is_none());
    }
}

#[test]
fn manifest_records_inputs_and_outputs() {
    use sha2::{Digest, Sha256};
    let (dir, cfg) = workspace();
    let out = dir.path().join("run");
    eval_run(&cfg, &out, &[]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "eval run");
    assert_eq!(m["seed"], 42);
    let queries = fs::read(fixtures().join("queries.jsonl")).unwrap();
    let digest: String = Sha256::digest(&queries).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(m["inputs"]["queries"]["sha256"], digest.as_str());
    assert!(m["backends"]["local"].is_string());
    let outputs = m["outputs"].to_string();
    assert!(outputs.contains("records.jsonl"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["eval", "run", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let out = run(&[
        "eval",
        "report",
        "--records",
        missing.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn unreachable_backend_fails_before_any_query() {
    let dir = tempfile::tempdir().unwrap();
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        format!(
            "[local]\nkind = \"http\"\nendpoint = \"http://127.0.0.1:{port}/v1/completions\"\nmodel = \"m\"\napi = \"completions\"\ntimeout_ms = 500\n\n[judge]\nkind = \"mock\"\n"
        ),
    )
    .unwrap();
    let out_dir = dir.path().join("run");
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "eval",
        "run",
        "--signals",
        "logprob",
        "--queries",
        fixtures().join("queries.jsonl").to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!out_dir.join("records.jsonl").exists());
    assert!(String::from_utf8_lossy(&out.stderr).contains("local"));
}

#[test]
fn calibrate_hits_target_fraction() {
    let (dir, cfg) = workspace();
    let run_dir = dir.path().join("run");
    eval_run(&cfg, &run_dir, &["--signals", "logprob"]);
    let out = dir.path().join("cal");
    let o = ok(&[
        "calibrate",
        "--records",
        run_dir.join("records.jsonl").to_str().unwrap(),
        "--signal",
        "logprob",
        "--target-frac",
        "0.3",
        "--out",
        out.to_str().unwrap(),
    ]);
    let theta: f64 = String::from_utf8_lossy(&o.stdout).trim().parse().unwrap();
    let c: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("calibration.json")).unwrap()).unwrap();
    assert_eq!(c["theta"].as_f64().unwrap(), theta);
    let escalated = c["escalated"].as_u64().unwrap() as i64;
    assert!((escalated - 30).abs() <= 1, "escalated {escalated}");

    let bad = run(&[
        "calibrate",
        "--records",
        run_dir.join("records.jsonl").to_str().unwrap(),
        "--target-frac",
        "1.5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn train_and_learning_curve_from_features() {
    let (dir, cfg) = workspace();
    let run_dir = dir.path().join("run");
    eval_run(&cfg, &run_dir, &["--signals", "logprob,ks"]);
    let features = run_dir.join("features.jsonl");
    let f = features.to_str().unwrap();
    let model_dir = dir.path().join("model");
    ok(&[
        "train",
        "routellm",
        "--variant",
        "pks",
        "--train",
        f,
        "--eval",
        f,
        "--out",
        model_dir.to_str().unwrap(),
        "--folds",
        "3",
    ]);
    assert!(model_dir.join("model.json").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(model_dir.join("train.json")).unwrap()).unwrap();
    assert_eq!(summary["train_rows"], 100);

    let curve_dir = dir.path().join("curve");
    ok(&[
        "learning-curve",
        "--variant",
        "nm",
        "--train",
        f,
        "--eval",
        f,
        "--out",
        curve_dir.to_str().unwrap(),
        "--folds",
        "3",
    ]);
    let csv = fs::read_to_string(curve_dir.join("learning_curve.csv")).unwrap();
    let sizes: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(sizes, ["25", "50", "100"]);

    // The trained model feeds back into an eval run as a supervised signal.
    let with_model = dir.path().join("run2");
    eval_run(
        &cfg,
        &with_model,
        &["--signals", "logprob,ks,routellm_pks", "--model", model_dir.join("model.json").to_str().unwrap()],
    );
    let first = fs::read_to_string(with_model.join("records.jsonl")).unwrap();
    assert!(first.lines().next().unwrap().contains("routellm_pks"));

    // The report picks up the learning curve.
    let rep = dir.path().join("rep");
    ok(&[
        "eval",
        "report",
        "--records",
        with_model.join("records.jsonl").to_str().unwrap(),
        "--learning-curve",
        curve_dir.join("learning_curve.json").to_str().unwrap(),
        "--bootstrap",
        "200",
        "--out",
        rep.to_str().unwrap(),
    ]);
    let md = fs::read_to_string(rep.join("report.md")).unwrap();
    assert!(md.contains("## Learning curve"));
    assert!(md.contains("routellm_pks"));
}
