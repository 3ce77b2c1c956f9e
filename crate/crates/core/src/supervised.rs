//! Supervised routing baselines: L2-regularized logistic regression over the
//! query embedding (`nm`) or the embedding with the knowledge-similarity
//! score appended (`pks`), with the penalty chosen by stratified k-fold
//! cross-validation.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{self, EvalError};
use crate::records::{l2_norm, FieldError, Record, SignalName, NORM_TOLERANCE, SCHEMA_VERSION};
use crate::rng::{self, Stream};

/// Training-set sizes of the default learning curve.
pub const DEFAULT_CURVE_SIZES: [usize; 6] = [25, 50, 100, 250, 500, 1000];

#[derive(Debug, Error)]
pub enum SupervisedError {
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("{rows} rows cannot be split into {folds} folds")]
    TooFewRows { rows: usize, folds: usize },
    #[error("feature vector has length {got}, expected {expected}")]
    FeatureLength { expected: usize, got: usize },
    #[error("the pks variant needs a knowledge-similarity value")]
    MissingKs,
    #[error("training size {size} exceeds pool of {pool}")]
    SizeExceedsPool { size: usize, pool: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("model file: {0}")]
    ModelFile(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Query embedding only.
    Nm,
    /// Query embedding with the knowledge-similarity score appended.
    Pks,
}

impl Variant {
    pub fn signal(self) -> SignalName {
        match self {
            Variant::Nm => SignalName::RoutellmNm,
            Variant::Pks => SignalName::RoutellmPks,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Nm => "nm",
            Variant::Pks => "pks",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = SupervisedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nm" => Ok(Variant::Nm),
            "pks" => Ok(Variant::Pks),
            other => Err(SupervisedError::Config(format!("unknown variant `{other}` (nm or pks)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub features: Vec<f64>,
    /// True when the local model's answer was good enough.
    pub label: bool,
}

/// Builds the feature vector for one query.
pub fn featurize(embedding: &[f64], ks: Option<f64>, variant: Variant) -> Result<Vec<f64>, SupervisedError> {
    match variant {
        Variant::Nm => Ok(embedding.to_vec()),
        Variant::Pks => {
            let ks = ks.ok_or(SupervisedError::MissingKs)?;
            let mut v = Vec::with_capacity(embedding.len() + 1);
            v.extend_from_slice(embedding);
            v.push(ks);
            Ok(v)
        }
    }
}

/// One labeled training example as stored on disk (`features.jsonl`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub query_id: String,
    pub embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks: Option<f64>,
    pub label: bool,
}

impl Record for TrainingExample {
    const KIND: &'static str = "training example";

    fn validate(&self) -> Result<(), FieldError> {
        if self.query_id.is_empty() {
            return Err(FieldError::new("query_id", "must be non-empty"));
        }
        let norm = l2_norm(&self.embedding);
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(FieldError::new("embedding", format!("norm {norm} is not 1 within {NORM_TOLERANCE}")));
        }
        if let Some(ks) = self.ks {
            if !(-1.0..=1.0).contains(&ks) {
                return Err(FieldError::new("ks", format!("{ks} outside [-1, 1]")));
            }
        }
        Ok(())
    }

    fn unique_key(&self) -> Option<&str> {
        Some(&self.query_id)
    }

    fn shared_dim(&self) -> Option<usize> {
        Some(self.embedding.len())
    }
}

impl TrainingExample {
    pub fn to_row(&self, variant: Variant) -> Result<FeatureRow, SupervisedError> {
        Ok(FeatureRow { features: featurize(&self.embedding, self.ks, variant)?, label: self.label })
    }
}

/// Ten strengths spaced logarithmically from 1e-4 to 1e4.
pub fn default_reg_grid() -> Vec<f64> {
    (0..10).map(|i| 10f64.powf(-4.0 + 8.0 * i as f64 / 9.0)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub folds: usize,
    /// Candidate L2 penalty strengths.
    pub reg_grid: Vec<f64>,
    pub seed: u64,
    /// Stop when the gradient norm falls below this.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { folds: 5, reg_grid: default_reg_grid(), seed: rng::DEFAULT_SEED, tolerance: 1e-8, max_iter: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Selected L2 penalty strength.
    pub reg_strength: f64,
    pub variant: Variant,
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + libm::log1p(libm::exp(-z.abs()))
}

fn logistic(z: f64) -> f64 {
    crate::signals::sigmoid(z)
}

fn linear(weights: &[f64], bias: f64, x: &[f64]) -> f64 {
    weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + bias
}

/// Regularized mean log-loss and its gradient.
///
/// `params` holds the weights followed by the bias. The objective is
/// `(1/n) * (sum_i logloss_i + (lambda/2) * |w|^2)`; the bias is not
/// penalized.
pub fn objective_and_gradient(rows: &[FeatureRow], lambda: f64, params: &[f64]) -> (f64, Vec<f64>) {
    let d = params.len() - 1;
    let (w, b) = (&params[..d], params[d]);
    let n = rows.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; d + 1];
    for row in rows {
        let z = linear(w, b, &row.features);
        let y = if row.label { 1.0 } else { 0.0 };
        loss += softplus(z) - y * z;
        let r = logistic(z) - y;
        for (g, x) in grad[..d].iter_mut().zip(&row.features) {
            *g += r * x;
        }
        grad[d] += r;
    }
    let sq: f64 = w.iter().map(|v| v * v).sum();
    loss += 0.5 * lambda * sq;
    for (g, wi) in grad[..d].iter_mut().zip(w) {
        *g += lambda * wi;
    }
    for g in &mut grad {
        *g /= n;
    }
    (loss / n, grad)
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes the regularized log-loss with L-BFGS and an Armijo backtracking
/// line search. Deterministic for a given row order.
fn fit(rows: &[FeatureRow], lambda: f64, tolerance: f64, max_iter: usize) -> Vec<f64> {
    const MEMORY: usize = 10;
    let dim = rows[0].features.len() + 1;
    let mut x = vec![0.0; dim];
    let (mut f, mut g) = objective_and_gradient(rows, lambda, &x);
    let mut history: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::with_capacity(MEMORY);

    for _ in 0..max_iter {
        if dotv(&g, &g).sqrt() < tolerance {
            break;
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dotv(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.last() {
            let gamma = dotv(s, y) / dotv(y, y);
            for qi in &mut q {
                *qi *= gamma;
            }
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let beta = rho * dotv(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - beta) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dotv(&g, &dir);
        if slope >= 0.0 {
            history.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dotv(&g, &g);
        }

        let mut step = if history.is_empty() { 1.0 / dotv(&g, &g).sqrt().max(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (fc, gc) = objective_and_gradient(rows, lambda, &cand);
            if fc <= f + 1e-4 * step * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            // no further decrease representable
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dotv(&s, &y);
        if sy > 1e-20 {
            if history.len() == MEMORY {
                history.remove(0);
            }
            history.push((s, y, 1.0 / sy));
        }
        let stalled = fnew >= f;
        x = xn;
        f = fnew;
        g = gnew;
        if stalled {
            break;
        }
    }
    x
}

fn check_rows(rows: &[FeatureRow]) -> Result<usize, SupervisedError> {
    let d = rows.first().map(|r| r.features.len()).unwrap_or(0);
    for r in rows {
        if r.features.len() != d {
            return Err(SupervisedError::FeatureLength { expected: d, got: r.features.len() });
        }
        if r.features.iter().any(|v| !v.is_finite()) {
            return Err(SupervisedError::Config("non-finite feature value".into()));
        }
    }
    Ok(d)
}

/// Sorts row indices by (label, features) so fold assignment and the fit
/// ignore the caller's row order.
fn canonical_order(rows: &[FeatureRow]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ra, rb) = (&rows[a], &rows[b]);
        ra.label.cmp(&rb.label).then_with(|| {
            ra.features
                .iter()
                .zip(&rb.features)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
    });
    idx
}

/// Stratified fold id per row.
fn assign_folds(rows: &[FeatureRow], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng::stream(seed, Stream::CvFolds);
    let mut pos: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].label).collect();
    let mut neg: Vec<usize> = (0..rows.len()).filter(|&i| !rows[i].label).collect();
    rng::shuffle(&mut pos, &mut rng);
    rng::shuffle(&mut neg, &mut rng);
    let mut fold = vec![0; rows.len()];
    for (k, &i) in pos.iter().chain(&neg).enumerate() {
        fold[i] = k % folds;
    }
    fold
}

fn mean_log_loss(rows: &[FeatureRow], params: &[f64]) -> f64 {
    let d = params.len() - 1;
    let total: f64 = rows
        .iter()
        .map(|r| {
            let z = linear(&params[..d], params[d], &r.features);
            softplus(z) - if r.label { z } else { 0.0 }
        })
        .sum();
    total / rows.len() as f64
}

/// Cross-validated mean validation log-loss for every grid strength.
pub fn cv_losses(rows: &[FeatureRow], cfg: &TrainConfig) -> Result<Vec<(f64, f64)>, SupervisedError> {
    validate_training(rows, cfg)?;
    let order = canonical_order(rows);
    let sorted: Vec<FeatureRow> = order.iter().map(|&i| rows[i].clone()).collect();
    let fold_of = assign_folds(&sorted, cfg.folds, cfg.seed);

    let jobs: Vec<(usize, usize)> = (0..cfg.reg_grid.len()).flat_map(|g| (0..cfg.folds).map(move |f| (g, f))).collect();
    let losses: Vec<Option<f64>> = jobs
        .par_iter()
        .map(|&(g, f)| {
            let (train, valid): (Vec<_>, Vec<_>) = sorted.iter().zip(&fold_of).partition(|(_, &fid)| fid != f);
            if valid.is_empty() || train.is_empty() {
                return None;
            }
            let train: Vec<FeatureRow> = train.into_iter().map(|(r, _)| r.clone()).collect();
            let valid: Vec<FeatureRow> = valid.into_iter().map(|(r, _)| r.clone()).collect();
            let params = fit(&train, cfg.reg_grid[g], cfg.tolerance, cfg.max_iter);
            Some(mean_log_loss(&valid, &params))
        })
        .collect();

    Ok(cfg
        .reg_grid
        .iter()
        .enumerate()
        .map(|(g, &lambda)| {
            let fold_losses: Vec<f64> = losses[g * cfg.folds..(g + 1) * cfg.folds].iter().flatten().copied().collect();
            (lambda, fold_losses.iter().sum::<f64>() / fold_losses.len() as f64)
        })
        .collect())
}

fn validate_training(rows: &[FeatureRow], cfg: &TrainConfig) -> Result<(), SupervisedError> {
    if cfg.folds < 2 {
        return Err(SupervisedError::Config("at least 2 folds required".into()));
    }
    if cfg.reg_grid.is_empty() || cfg.reg_grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(SupervisedError::Config("regularization grid must hold positive finite strengths".into()));
    }
    if rows.len() < cfg.folds {
        return Err(SupervisedError::TooFewRows { rows: rows.len(), folds: cfg.folds });
    }
    check_rows(rows)?;
    let positives = rows.iter().filter(|r| r.label).count();
    if positives == 0 || positives == rows.len() {
        return Err(SupervisedError::SingleClass);
    }
    Ok(())
}

/// Selects the penalty by cross-validation, then refits on every row.
pub fn train_cv(rows: &[FeatureRow], cfg: &TrainConfig, variant: Variant) -> Result<LogRegModel, SupervisedError> {
    let losses = cv_losses(rows, cfg)?;
    // lowest loss; exact ties go to the stronger penalty
    let (best_lambda, _) = losses
        .iter()
        .copied()
        .fold(None, |best: Option<(f64, f64)>, (lambda, loss)| match best {
            Some((bl, bloss)) if loss > bloss || (loss == bloss && lambda <= bl) => Some((bl, bloss)),
            _ => Some((lambda, loss)),
        })
        .expect("grid is non-empty");

    let order = canonical_order(rows);
    let sorted: Vec<FeatureRow> = order.iter().map(|&i| rows[i].clone()).collect();
    let params = fit(&sorted, best_lambda, cfg.tolerance, cfg.max_iter);
    let d = params.len() - 1;
    Ok(LogRegModel { weights: params[..d].to_vec(), bias: params[d], reg_strength: best_lambda, variant })
}

/// `sigma(w . x + b)`.
pub fn predict(model: &LogRegModel, features: &[f64]) -> Result<f64, SupervisedError> {
    if features.len() != model.weights.len() {
        return Err(SupervisedError::FeatureLength { expected: model.weights.len(), got: features.len() });
    }
    Ok(logistic(linear(&model.weights, model.bias, features)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub size: usize,
    pub auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub variant: Variant,
    pub seed: u64,
    pub eval_rows: usize,
    pub points: Vec<CurvePoint>,
}

/// Held-out AUROC after training on nested seeded subsamples of the pool.
pub fn learning_curve(
    pool: &[FeatureRow],
    sizes: &[usize],
    eval_rows: &[FeatureRow],
    cfg: &TrainConfig,
    variant: Variant,
) -> Result<LearningCurve, SupervisedError> {
    if let Some(&max) = sizes.iter().max() {
        if max > pool.len() {
            return Err(SupervisedError::SizeExceedsPool { size: max, pool: pool.len() });
        }
    }
    let mut order = canonical_order(pool);
    rng::shuffle(&mut order, &mut rng::stream(cfg.seed, Stream::Subsample));
    let labels: Vec<bool> = eval_rows.iter().map(|r| r.label).collect();
    let mut points = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let subset: Vec<FeatureRow> = order[..size].iter().map(|&i| pool[i].clone()).collect();
        let model = train_cv(&subset, cfg, variant)?;
        let scores = eval_rows.iter().map(|r| predict(&model, &r.features)).collect::<Result<Vec<_>, _>>()?;
        points.push(CurvePoint { size, auroc: evaluation::auroc(&scores, &labels)? });
    }
    Ok(LearningCurve { variant, seed: cfg.seed, eval_rows: eval_rows.len(), points })
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    v: u32,
    variant: Variant,
    /// Embedding dimension the model was trained on.
    dim: usize,
    weights: Vec<f64>,
    bias: f64,
    reg_strength: f64,
}

impl LogRegModel {
    /// Embedding dimension this model expects.
    pub fn embedding_dim(&self) -> usize {
        match self.variant {
            Variant::Nm => self.weights.len(),
            Variant::Pks => self.weights.len().saturating_sub(1),
        }
    }

    pub fn to_json(&self) -> Result<String, SupervisedError> {
        if self.weights.iter().chain([&self.bias, &self.reg_strength]).any(|v| !v.is_finite()) {
            return Err(SupervisedError::ModelFile("non-finite parameter".into()));
        }
        let file = ModelFile {
            v: SCHEMA_VERSION,
            variant: self.variant,
            dim: self.embedding_dim(),
            weights: self.weights.clone(),
            bias: self.bias,
            reg_strength: self.reg_strength,
        };
        serde_json::to_string_pretty(&file).map_err(|e| SupervisedError::ModelFile(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, SupervisedError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| SupervisedError::ModelFile(e.to_string()))?;
        if file.v != SCHEMA_VERSION {
            return Err(SupervisedError::ModelFile(format!("unsupported schema version {}", file.v)));
        }
        let expected = file.dim + usize::from(file.variant == Variant::Pks);
        if file.weights.len() != expected {
            return Err(SupervisedError::ModelFile(format!(
                "{} weights for dim {} ({} variant)",
                file.weights.len(),
                file.dim,
                file.variant.as_str()
            )));
        }
        if file.reg_strength.is_nan() || file.reg_strength <= 0.0 {
            return Err(SupervisedError::ModelFile("reg_strength must be > 0".into()));
        }
        Ok(Self { weights: file.weights, bias: file.bias, reg_strength: file.reg_strength, variant: file.variant })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SupervisedError> {
        fs::write(path.as_ref(), self.to_json()? + "\n").map_err(|e| SupervisedError::ModelFile(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SupervisedError> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| SupervisedError::ModelFile(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }
}
