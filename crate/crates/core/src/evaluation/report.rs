//! Markdown and CSV rendering of an evaluation run.
//!
//! Output is a pure function of the records and options: groups are sorted,
//! every number is printed at fixed precision, and bootstrap resampling runs
//! from the configured seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use super::{
    auroc, bootstrap_ci, fuse_mean, fusion_subsets, latency_summary, operating_points, paired_delta, BootstrapConfig,
    EvalError, DEFAULT_FRACS,
};
use crate::records::{EvalRecord, LabelSource, SignalName, AUX_CLOUD_CORRECT};
use crate::supervised::LearningCurve;

/// Group label covering every dataset.
pub const ALL_GROUP: &str = "all";

#[derive(Debug, Clone)]
pub struct ReportOptions {
    pub title: String,
    pub bootstrap: BootstrapConfig,
    /// Aggregate cloud accuracy; derived from `cloud_correct` aux labels when
    /// absent and every record carries one.
    pub cloud_accuracy: Option<f64>,
    pub operating_signal: SignalName,
    pub fracs: Vec<f64>,
    pub learning_curve: Option<LearningCurve>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            title: "Confidence signal evaluation".into(),
            bootstrap: BootstrapConfig::default(),
            cloud_accuracy: None,
            operating_signal: SignalName::Logprob,
            fracs: DEFAULT_FRACS.to_vec(),
            learning_curve: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub markdown: String,
    /// File name to CSV contents.
    pub csv: BTreeMap<String, String>,
}

fn fmt3(x: f64) -> String {
    format!("{x:.3}")
}

fn signed3(x: f64) -> String {
    format!("{x:+.3}")
}

struct Group<'a> {
    name: String,
    records: Vec<&'a EvalRecord>,
}

fn column(records: &[&EvalRecord], signal: SignalName) -> (Vec<f64>, Vec<bool>) {
    records.iter().filter_map(|r| r.signals.get(signal).map(|s| (s, r.local_correct))).unzip()
}

fn present_signals(records: &[&EvalRecord]) -> Vec<SignalName> {
    SignalName::ALL.into_iter().filter(|&s| records.iter().any(|r| r.signals.get(s).is_some())).collect()
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self { header: header.iter().map(|h| h.as_ref().to_string()).collect(), rows: Vec::new() }
    }

    fn markdown(&self, out: &mut String) {
        let _ = writeln!(out, "| {} |", self.header.join(" | "));
        let _ = writeln!(out, "|{}|", self.header.iter().map(|_| "---").collect::<Vec<_>>().join("|"));
        for row in &self.rows {
            let _ = writeln!(out, "| {} |", row.join(" | "));
        }
        out.push('\n');
    }

    fn csv(&self) -> String {
        let escape = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        let mut out = self.header.join(",") + "\n";
        for row in &self.rows {
            out.push_str(&row.iter().map(|c| escape(c)).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }
}

/// Renders the evaluation report. Rows flagged `unlabeled` are skipped.
pub fn report(records: &[EvalRecord], opts: &ReportOptions) -> Result<Report, EvalError> {
    let labeled: Vec<&EvalRecord> = records.iter().filter(|r| !r.is_unlabeled()).collect();
    if labeled.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    let skipped = records.len() - labeled.len();
    let mut md = String::new();
    let mut csv = BTreeMap::new();

    let datasets: BTreeSet<&str> = labeled.iter().map(|r| r.dataset()).collect();
    let mut groups: Vec<Group<'_>> = datasets
        .iter()
        .map(|&d| Group {
            name: if d.is_empty() { "(untagged)".to_string() } else { d.to_string() },
            records: labeled.iter().copied().filter(|r| r.dataset() == d).collect(),
        })
        .collect();
    if groups.len() > 1 {
        groups.push(Group { name: ALL_GROUP.to_string(), records: labeled.clone() });
    }

    // summary
    let correct = labeled.iter().filter(|r| r.local_correct).count();
    let _ = writeln!(md, "# {}\n", opts.title);
    let _ = writeln!(md, "- records: {} labeled", labeled.len());
    if skipped > 0 {
        let _ = writeln!(md, "- skipped: {skipped} unlabeled");
    }
    let _ = writeln!(
        md,
        "- local accuracy: {:.1}% ({correct}/{})",
        100.0 * correct as f64 / labeled.len() as f64,
        labeled.len()
    );
    let mut sources: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &labeled {
        *sources.entry(r.label_source.as_str()).or_default() += 1;
    }
    let judge = sources.get(LabelSource::Judge.as_str()).copied().unwrap_or(0);
    let _ = writeln!(
        md,
        "- label sources: {}",
        sources.iter().map(|(k, v)| format!("{k} {v}")).collect::<Vec<_>>().join(", ")
    );
    let _ = writeln!(md, "- judge fallback rate: {:.0}%", 100.0 * judge as f64 / labeled.len() as f64);
    let _ = writeln!(
        md,
        "- bootstrap: {} resamples, seed {}, {:.0}% intervals\n",
        opts.bootstrap.samples,
        opts.bootstrap.seed,
        100.0 * (1.0 - opts.bootstrap.alpha)
    );

    // per-signal AUROC
    let mut table = Table::new(&["dataset", "signal", "n", "auroc", "ci_lo", "ci_hi"]);
    let mut point: BTreeMap<(String, SignalName), f64> = BTreeMap::new();
    for g in &groups {
        for signal in present_signals(&g.records) {
            let (scores, labels) = column(&g.records, signal);
            let row = match (auroc(&scores, &labels), bootstrap_ci(&scores, &labels, &opts.bootstrap)) {
                (Ok(a), Ok((lo, hi))) => {
                    point.insert((g.name.clone(), signal), a);
                    vec![fmt3(a), fmt3(lo), fmt3(hi)]
                }
                _ => vec!["n/a".into(), "n/a".into(), "n/a".into()],
            };
            let mut full = vec![g.name.clone(), signal.to_string(), scores.len().to_string()];
            full.extend(row);
            table.rows.push(full);
        }
    }
    md.push_str("## Signal AUROC\n\n");
    table.markdown(&mut md);
    csv.insert("auroc.csv".to_string(), table.csv());

    // paired deltas
    let mut table = Table::new(&["dataset", "signal_a", "signal_b", "n", "delta", "ci_lo", "ci_hi", "significant"]);
    for g in &groups {
        let signals = present_signals(&g.records);
        for (i, &a) in signals.iter().enumerate() {
            for &b in &signals[i + 1..] {
                let both: Vec<&EvalRecord> = g
                    .records
                    .iter()
                    .copied()
                    .filter(|r| r.signals.get(a).is_some() && r.signals.get(b).is_some())
                    .collect();
                let (sa, labels) = column(&both, a);
                let (sb, _) = column(&both, b);
                let cells = match paired_delta(&sa, &sb, &labels, &opts.bootstrap) {
                    Ok(d) => vec![
                        signed3(d.delta),
                        signed3(d.lo),
                        signed3(d.hi),
                        if d.significant { "yes" } else { "no" }.to_string(),
                    ],
                    Err(_) => vec!["n/a".into(), "n/a".into(), "n/a".into(), "n/a".into()],
                };
                let mut row = vec![g.name.clone(), a.to_string(), b.to_string(), both.len().to_string()];
                row.extend(cells);
                table.rows.push(row);
            }
        }
    }
    if !table.rows.is_empty() {
        md.push_str("## Paired deltas\n\n");
        table.markdown(&mut md);
        csv.insert("paired_deltas.csv".to_string(), table.csv());
    }

    // cross-dataset transfer
    let named: Vec<&Group<'_>> = groups.iter().filter(|g| g.name != ALL_GROUP).collect();
    if named.len() >= 2 {
        let first = &named[0].name;
        let mut header = vec!["signal".to_string()];
        header.extend(named.iter().map(|g| g.name.clone()));
        header.extend(named[1..].iter().map(|g| format!("delta_{}", g.name)));
        let mut table = Table::new(&header);
        for signal in SignalName::ALL {
            let vals: Vec<Option<f64>> = named.iter().map(|g| point.get(&(g.name.clone(), signal)).copied()).collect();
            if vals.iter().all(Option::is_none) {
                continue;
            }
            let mut row = vec![signal.to_string()];
            row.extend(vals.iter().map(|v| v.map_or("n/a".into(), fmt3)));
            let base = point.get(&(first.clone(), signal)).copied();
            row.extend(vals[1..].iter().map(|v| match (base, v) {
                (Some(b), Some(v)) => signed3(v - b),
                _ => "n/a".into(),
            }));
            table.rows.push(row);
        }
        md.push_str("## Cross-dataset transfer\n\n");
        table.markdown(&mut md);
        csv.insert("transfer.csv".to_string(), table.csv());
    }

    // learning curve
    if let Some(lc) = &opts.learning_curve {
        let mut table = Table::new(&["train_size", "auroc"]);
        for p in &lc.points {
            table.rows.push(vec![p.size.to_string(), fmt3(p.auroc)]);
        }
        let _ =
            writeln!(md, "## Learning curve (routellm_{}, {} held-out queries)\n", lc.variant.as_str(), lc.eval_rows);
        table.markdown(&mut md);
        csv.insert("learning_curve.csv".to_string(), table.csv());
    }

    // mean fusion over zero-shot signals present in every record
    let complete: Vec<SignalName> =
        SignalName::ZERO_SHOT.into_iter().filter(|&s| labeled.iter().all(|r| r.signals.get(s).is_some())).collect();
    if complete.len() >= 2 {
        let owned: Vec<EvalRecord> = labeled.iter().map(|r| (*r).clone()).collect();
        let labels: Vec<bool> = owned.iter().map(|r| r.local_correct).collect();
        let mut table = Table::new(&["signals", "auroc"]);
        for subset in fusion_subsets(&complete) {
            let fused = fuse_mean(&owned, &subset)?;
            let name = subset.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("+");
            table.rows.push(vec![name, auroc(&fused, &labels).map_or("n/a".into(), fmt3)]);
        }
        md.push_str("## Mean fusion\n\n");
        table.markdown(&mut md);
        csv.insert("fusion.csv".to_string(), table.csv());
    }

    // latency
    let lat = latency_summary(&labeled.iter().map(|r| (*r).clone()).collect::<Vec<_>>());
    if !lat.is_empty() {
        let mut table = Table::new(&["signal", "mean_ms"]);
        for (k, v) in &lat {
            table.rows.push(vec![k.clone(), format!("{v:.1}")]);
        }
        md.push_str("## Mean signal latency (ms)\n\n");
        table.markdown(&mut md);
        csv.insert("latency.csv".to_string(), table.csv());
    }

    // operating points
    let cloud_accuracy = opts.cloud_accuracy.or_else(|| {
        let labels: Option<Vec<bool>> = labeled.iter().map(|r| r.aux_bool(AUX_CLOUD_CORRECT)).collect();
        labels.map(|l| l.iter().filter(|&&c| c).count() as f64 / l.len() as f64)
    });
    let has_signal = labeled.iter().all(|r| r.signals.get(opts.operating_signal).is_some());
    if let (Some(cloud), true) = (cloud_accuracy, has_signal) {
        let owned: Vec<EvalRecord> = labeled.iter().map(|r| (*r).clone()).collect();
        if let Ok(points) = operating_points(&owned, opts.operating_signal, &opts.fracs, cloud) {
            let mut table = Table::new(&["escalate_pct", "local_pct", "accuracy_pct", "quality_preservation"]);
            for p in points {
                table.rows.push(vec![
                    format!("{:.0}", 100.0 * p.escalate_frac),
                    format!("{:.0}", 100.0 * (1.0 - p.escalate_frac)),
                    format!("{:.1}", 100.0 * p.mixed_accuracy),
                    format!("{:.2}", p.quality_preservation),
                ]);
            }
            let _ = writeln!(
                md,
                "## Operating points (bottom k% by {} escalated, cloud accuracy {:.1}%)\n",
                opts.operating_signal,
                100.0 * cloud
            );
            table.markdown(&mut md);
            csv.insert("operating_points.csv".to_string(), table.csv());
        }
    }

    Ok(Report { markdown: md, csv })
}
