use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::rng::{self, Rng, Stream};

/// Redraws allowed per bootstrap resample before giving up.
pub const MAX_REDRAWS: usize = 100;

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l).count();
    (pos, labels.len() - pos)
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFinite(i));
    }
    let (positives, negatives) = class_counts(labels);
    if positives == 0 || negatives == 0 {
        return Err(EvalError::SingleClass { positives, negatives });
    }
    Ok(())
}

/// Mann-Whitney AUROC from mid-ranks: the probability that a random positive
/// outscores a random negative, ties counting one half. O(n log n).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    check_inputs(scores, labels)?;
    Ok(auroc_unchecked(scores, labels))
}

fn auroc_unchecked(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let mid = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k]).count();
        rank_sum_pos += mid * pos_in_group as f64;
        i = j;
    }
    let (pos, neg) = class_counts(labels);
    let (pos, neg) = (pos as f64, neg as f64);
    (rank_sum_pos - pos * (pos + 1.0) / 2.0) / (pos * neg)
}

/// Quadratic pair count, kept as an independent check on [`auroc`].
pub fn auroc_brute_force(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    check_inputs(scores, labels)?;
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    Ok(wins / pairs)
}

/// Linear-interpolation quantile of ascending-sorted data (the numpy default).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub samples: usize,
    pub seed: u64,
    pub alpha: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { samples: 1000, seed: rng::DEFAULT_SEED, alpha: 0.05 }
    }
}

impl BootstrapConfig {
    fn validate(&self) -> Result<(), EvalError> {
        if self.samples == 0 {
            return Err(EvalError::InvalidArg("bootstrap needs at least one sample".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(EvalError::InvalidArg(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

/// Draws `cfg.samples` two-class index resamples in stream order.
fn resamples(labels: &[bool], cfg: &BootstrapConfig) -> Result<Vec<Vec<usize>>, EvalError> {
    let n = labels.len();
    let mut rng = rng::stream(cfg.seed, Stream::Bootstrap);
    let mut out = Vec::with_capacity(cfg.samples);
    for _ in 0..cfg.samples {
        let mut accepted = None;
        for _ in 0..=MAX_REDRAWS {
            let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let pos = idx.iter().filter(|&&i| labels[i]).count();
            if pos > 0 && pos < n {
                accepted = Some(idx);
                break;
            }
        }
        out.push(accepted.ok_or(EvalError::RetryExhausted(MAX_REDRAWS))?);
    }
    Ok(out)
}

fn gather<T: Copy>(values: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| values[i]).collect()
}

fn percentile_interval(mut stats: Vec<f64>, alpha: f64) -> (f64, f64) {
    stats.sort_by(f64::total_cmp);
    (quantile(&stats, alpha / 2.0), quantile(&stats, 1.0 - alpha / 2.0))
}

/// Percentile bootstrap interval for AUROC.
pub fn bootstrap_ci(scores: &[f64], labels: &[bool], cfg: &BootstrapConfig) -> Result<(f64, f64), EvalError> {
    check_inputs(scores, labels)?;
    cfg.validate()?;
    let stats: Vec<f64> =
        resamples(labels, cfg)?.iter().map(|idx| auroc_unchecked(&gather(scores, idx), &gather(labels, idx))).collect();
    Ok(percentile_interval(stats, cfg.alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedDelta {
    pub delta: f64,
    pub lo: f64,
    pub hi: f64,
    /// The interval excludes zero.
    pub significant: bool,
}

/// AUROC(a) - AUROC(b) with a percentile interval; each resample feeds the
/// same rows to both signals.
pub fn paired_delta(
    scores_a: &[f64],
    scores_b: &[f64],
    labels: &[bool],
    cfg: &BootstrapConfig,
) -> Result<PairedDelta, EvalError> {
    if scores_a.len() != scores_b.len() {
        return Err(EvalError::LengthMismatch(format!("{} vs {} scores", scores_a.len(), scores_b.len())));
    }
    check_inputs(scores_a, labels)?;
    check_inputs(scores_b, labels)?;
    cfg.validate()?;
    let delta = auroc_unchecked(scores_a, labels) - auroc_unchecked(scores_b, labels);
    let stats: Vec<f64> = resamples(labels, cfg)?
        .iter()
        .map(|idx| {
            let l = gather(labels, idx);
            auroc_unchecked(&gather(scores_a, idx), &l) - auroc_unchecked(&gather(scores_b, idx), &l)
        })
        .collect();
    let (lo, hi) = percentile_interval(stats, cfg.alpha);
    Ok(PairedDelta { delta, lo, hi, significant: lo > 0.0 || hi < 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_small_cases() {
        assert_eq!(auroc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.4, 0.4, 0.4, 0.4], &[true, false, true, false]).unwrap(), 0.5);
        // one tie (0.5) and one win (1.0) over the two pairs
        assert_eq!(auroc(&[0.8, 0.8, 0.2], &[true, false, false]).unwrap(), 0.75);
        assert_eq!(auroc_brute_force(&[0.8, 0.8, 0.2], &[true, false, false]).unwrap(), 0.75);
    }

    #[test]
    fn auroc_rejects_bad_input() {
        assert!(matches!(
            auroc(&[0.1, 0.2], &[true, true]),
            Err(EvalError::SingleClass { positives: 2, negatives: 0 })
        ));
        assert!(matches!(auroc(&[0.1], &[true, false]), Err(EvalError::LengthMismatch(_))));
        assert!(matches!(auroc(&[f64::NAN, 0.2], &[true, false]), Err(EvalError::NonFinite(0))));
    }

    #[test]
    fn quantile_interpolates() {
        let d = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&d, 0.0), 1.0);
        assert_eq!(quantile(&d, 1.0), 4.0);
        assert_eq!(quantile(&d, 0.5), 2.5);
        assert!((quantile(&d, 0.8) - 3.4).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let scores: Vec<f64> = (0..60).map(|i| ((i * 37) % 60) as f64 / 60.0).collect();
        let labels: Vec<bool> = (0..60).map(|i| (i * 37) % 60 > 25 || i % 7 == 0).collect();
        let cfg = BootstrapConfig { samples: 200, ..Default::default() };
        let a = bootstrap_ci(&scores, &labels, &cfg).unwrap();
        let b = bootstrap_ci(&scores, &labels, &cfg).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1.to_bits(), b.1.to_bits());
        let c = bootstrap_ci(&scores, &labels, &BootstrapConfig { seed: 7, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn separated_sample_interval_is_degenerate_at_one() {
        let scores: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let labels: Vec<bool> = (0..200).map(|i| i >= 100).collect();
        let (lo, hi) = bootstrap_ci(&scores, &labels, &BootstrapConfig::default()).unwrap();
        assert_eq!((lo, hi), (1.0, 1.0));
    }

    #[test]
    fn paired_delta_identical_and_extreme() {
        let scores: Vec<f64> = (0..40).map(|i| (i % 9) as f64).collect();
        let labels: Vec<bool> = (0..40).map(|i| i % 3 == 0).collect();
        let cfg = BootstrapConfig { samples: 300, ..Default::default() };
        let same = paired_delta(&scores, &scores, &labels, &cfg).unwrap();
        assert_eq!(same, PairedDelta { delta: 0.0, lo: 0.0, hi: 0.0, significant: false });

        let good: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
        let bad: Vec<f64> = good.iter().map(|s| 1.0 - s).collect();
        let d = paired_delta(&good, &bad, &labels, &cfg).unwrap();
        assert_eq!(d.delta, 1.0);
        assert!(d.significant);
    }
}
