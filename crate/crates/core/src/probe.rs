//! Stratified splitting, class weighting and the ℓ2-regularized logistic probe.
//!
//! The probe minimizes
//!
//! ```text
//! L(w, b) = Σᵢ cᵢ · log(1 + exp(−ỹᵢ (w·zᵢ + b))) + (λ/2)‖w‖²,   ỹ ∈ {−1, +1}
//! ```
//!
//! over standardized features with a damped Newton method. The intercept is not
//! penalized.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg_pca::{PcaError, PcaModel};

pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 500;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProbeError {
    #[error("train_fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("lambda must be positive and finite, got {0}")]
    InvalidLambda(f64),
    #[error("class {class} has {count} member(s); at least {needed} required")]
    TooFewInClass {
        class: bool,
        count: usize,
        needed: usize,
    },
    #[error("{features} feature rows but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("non-finite input")]
    NonFinite,
    #[error("dimension mismatch: expected {expected} columns, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("no convergence after {iterations} iterations (gradient ∞-norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },
    #[error(transparent)]
    Pca(#[from] PcaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-class seeded shuffle; `round(train_fraction · n_class)` members of each
/// class go to train, clamped so that both folds keep at least one of each class.
pub fn stratified_split(labels: &[bool], spec: &SplitSpec) -> Result<Split, ProbeError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(ProbeError::InvalidFraction(spec.train_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [true, false] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < 2 {
            return Err(ProbeError::TooFewInClass {
                class,
                count: members.len(),
                needed: 2,
            });
        }
        members.shuffle(&mut rng);
        let n_train = ((spec.train_fraction * members.len() as f64).round() as usize)
            .clamp(1, members.len() - 1);
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w_pos: f64,
    pub w_neg: f64,
}

impl ClassWeights {
    pub const UNIFORM: Self = Self {
        w_pos: 1.0,
        w_neg: 1.0,
    };

    pub fn of(&self, label: bool) -> f64 {
        if label {
            self.w_pos
        } else {
            self.w_neg
        }
    }
}

/// `w_c = n / (2 · n_c)`.
pub fn balanced_class_weights(labels: &[bool]) -> Result<ClassWeights, ProbeError> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    for (class, count) in [(true, n_pos), (false, n_neg)] {
        if count == 0 {
            return Err(ProbeError::TooFewInClass {
                class,
                count,
                needed: 1,
            });
        }
    }
    let n = labels.len() as f64;
    Ok(ClassWeights {
        w_pos: n / (2.0 * n_pos as f64),
        w_neg: n / (2.0 * n_neg as f64),
    })
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sign(label: bool) -> f64 {
    if label {
        1.0
    } else {
        -1.0
    }
}

/// Objective value and gradient. The gradient has `k + 1` entries: the weight
/// gradient followed by the intercept derivative.
pub fn loss_and_gradient(
    weights: &[f64],
    intercept: f64,
    z: &DMatrix<f64>,
    y: &[bool],
    cw: ClassWeights,
    lambda: f64,
) -> (f64, Vec<f64>) {
    let k = weights.len();
    assert_eq!(z.ncols(), k, "feature count must match weights");
    assert_eq!(z.nrows(), y.len(), "row count must match labels");
    let w = DVector::from_column_slice(weights);
    let logits = z * &w;

    let mut loss = 0.5 * lambda * w.norm_squared();
    let mut coef = DVector::zeros(y.len());
    for (i, &label) in y.iter().enumerate() {
        let s = sign(label);
        let m = s * (logits[i] + intercept);
        let c = cw.of(label);
        loss += c * softplus(-m);
        coef[i] = -c * s * sigmoid(-m);
    }
    let gw = z.tr_mul(&coef) + lambda * &w;
    let mut grad: Vec<f64> = gw.iter().copied().collect();
    grad.push(coef.sum());
    (loss, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

/// Minimizes the objective over the given features as-is (no standardization).
pub fn fit_logistic(
    z: &DMatrix<f64>,
    y: &[bool],
    cw: ClassWeights,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<LogisticFit, ProbeError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(ProbeError::InvalidLambda(lambda));
    }
    if z.nrows() != y.len() {
        return Err(ProbeError::LengthMismatch {
            features: z.nrows(),
            labels: y.len(),
        });
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(ProbeError::NonFinite);
    }
    for class in [true, false] {
        let count = y.iter().filter(|&&l| l == class).count();
        if count == 0 {
            return Err(ProbeError::TooFewInClass {
                class,
                count,
                needed: 1,
            });
        }
    }

    let (n, k) = z.shape();
    // design matrix with a trailing column of ones for the intercept
    let mut a = DMatrix::zeros(n, k + 1);
    a.view_mut((0, 0), (n, k)).copy_from(z);
    a.column_mut(k).fill(1.0);

    let mut theta = DVector::<f64>::zeros(k + 1);
    let eval = |theta: &DVector<f64>| {
        loss_and_gradient(&theta.as_slice()[..k], theta[k], z, y, cw, lambda)
    };
    let (mut loss, mut grad) = eval(&theta);

    for iter in 0..=max_iter {
        let grad_norm = inf_norm(&grad);
        if grad_norm <= tol {
            return Ok(LogisticFit {
                weights: theta.as_slice()[..k].to_vec(),
                intercept: theta[k],
                iterations: iter,
                grad_norm,
            });
        }
        if iter == max_iter {
            return Err(ProbeError::NonConvergence {
                iterations: iter,
                grad_norm,
            });
        }

        let logits = &a * &theta;
        let mut h_weights = DVector::zeros(n);
        for (i, &label) in y.iter().enumerate() {
            let p = sigmoid(logits[i]);
            h_weights[i] = cw.of(label) * p * (1.0 - p);
        }
        let mut scaled = a.clone();
        for (mut row, &h) in scaled.row_iter_mut().zip(h_weights.iter()) {
            row *= h;
        }
        let mut hessian = a.tr_mul(&scaled);
        for j in 0..k {
            hessian[(j, j)] += lambda;
        }
        let g = DVector::from_vec(grad.clone());
        let step = newton_step(hessian, &g);

        // backtracking line search with the Armijo condition
        let slope = g.dot(&step);
        let mut alpha = 1.0;
        let mut accepted = false;
        // near the optimum the decrease drops below the rounding error of the loss
        let slack = 8.0 * f64::EPSILON * loss.abs();
        while alpha > 1e-12 {
            let candidate = &theta - alpha * &step;
            let (l, gr) = eval(&candidate);
            let armijo = l <= loss - 1e-4 * alpha * slope;
            let flat = l <= loss + slack && inf_norm(&gr) < grad_norm;
            if armijo || flat {
                theta = candidate;
                loss = l;
                grad = gr;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // line search stalled above tolerance
            return Err(ProbeError::NonConvergence {
                iterations: iter + 1,
                grad_norm,
            });
        }
    }
    unreachable!("loop returns on its last iteration")
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, g| m.max(g.abs()))
}

/// Solves `H · s = g`, adding a growing ridge when `H` is not numerically positive definite.
fn newton_step(hessian: DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let scale = hessian.diagonal().amax().max(1.0);
    let mut ridge = 0.0;
    loop {
        let mut h = hessian.clone();
        for j in 0..h.nrows() {
            h[(j, j)] += ridge;
        }
        if let Some(chol) = h.cholesky() {
            return chol.solve(g);
        }
        ridge = if ridge == 0.0 { 1e-12 * scale } else { ridge * 10.0 };
        if ridge > scale {
            // gradient descent direction as last resort
            return g / scale;
        }
    }
}

/// Where a trained probe's data came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub pack: String,
    pub t: u32,
    pub cohort: String,
    /// Example ids of the training fold.
    pub training_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub feature_means: Vec<f64>,
    pub feature_scales: Vec<f64>,
    /// Absent for probes over hand-built features (the output-space baselines).
    pub pca: Option<PcaModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// Per-column mean and population standard deviation; constant columns get scale 1.
pub fn standardization(z: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = z.nrows().max(1) as f64;
    let mut means = Vec::with_capacity(z.ncols());
    let mut scales = Vec::with_capacity(z.ncols());
    for col in z.column_iter() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        let magnitude = col.amax();
        means.push(mean);
        scales.push(if sd > 1e-12 * (1.0 + magnitude) { sd } else { 1.0 });
    }
    (means, scales)
}

fn standardize(z: &DMatrix<f64>, means: &[f64], scales: &[f64]) -> DMatrix<f64> {
    let mut out = z.clone();
    for mut row in out.row_iter_mut() {
        for ((v, m), s) in row.iter_mut().zip(means).zip(scales) {
            *v = (*v - m) / s;
        }
    }
    out
}

/// Standardizes `z_train` and fits the logistic objective on it.
pub fn train_probe(
    z_train: &DMatrix<f64>,
    y_train: &[bool],
    cw: ClassWeights,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<ProbeModel, ProbeError> {
    if z_train.iter().any(|v| !v.is_finite()) {
        return Err(ProbeError::NonFinite);
    }
    let (feature_means, feature_scales) = standardization(z_train);
    let zs = standardize(z_train, &feature_means, &feature_scales);
    let fit = fit_logistic(&zs, y_train, cw, lambda, tol, max_iter)?;
    Ok(ProbeModel {
        weights: fit.weights,
        intercept: fit.intercept,
        lambda,
        feature_means,
        feature_scales,
        pca: None,
        provenance: None,
    })
}

impl ProbeModel {
    pub fn with_pca(mut self, pca: PcaModel) -> Self {
        self.pca = Some(pca);
        self
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    /// Number of raw input columns expected by [`predict_scores`].
    pub fn input_dim(&self) -> usize {
        self.pca
            .as_ref()
            .map_or(self.weights.len(), PcaModel::input_dim)
    }

    /// Probabilities for already-projected features.
    pub fn scores_from_features(&self, z: &DMatrix<f64>) -> Result<Vec<f64>, ProbeError> {
        if z.ncols() != self.weights.len() {
            return Err(ProbeError::DimensionMismatch {
                expected: self.weights.len(),
                actual: z.ncols(),
            });
        }
        Ok(z
            .row_iter()
            .map(|row| {
                let logit = row
                    .iter()
                    .zip(&self.weights)
                    .zip(self.feature_means.iter().zip(&self.feature_scales))
                    .map(|((v, w), (m, s))| w * (v - m) / s)
                    .sum::<f64>()
                    + self.intercept;
                // keep scores strictly inside (0, 1) so thresholds 0 and 1 stay meaningful
                sigmoid(logit).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
            })
            .collect())
    }
}

/// `sigmoid(w · standardize(project(pca, x)) + b)` per row of `x_raw`.
pub fn predict_scores(model: &ProbeModel, x_raw: &DMatrix<f64>) -> Result<Vec<f64>, ProbeError> {
    match &model.pca {
        Some(pca) => model.scores_from_features(&pca.project(x_raw)?),
        None => model.scores_from_features(x_raw),
    }
}

/// The probe bundle file: one JSON document with everything needed to reapply a probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeBundle {
    pub split: SplitSpec,
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub model: ProbeModel,
}

impl ProbeBundle {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fs::write(path, self.to_json())
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}
