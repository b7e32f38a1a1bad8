//! Synthetic trace packs with a planted linear correctness signal.
//!
//! Each pooled state is `±(δ/2)·u + noise` with `u` a seeded random unit vector
//! and unit-variance isotropic Gaussian noise, so the best achievable AUC at any
//! single checkpoint is `Φ(δ/√2)`. Noise is partly shared across the checkpoints
//! of one example (`checkpoint_correlation`) without changing its marginal law.
//!
//! With [`LengthCoupling::DifficultyCoupled`], hard items reason longer, so late
//! checkpoints are dominated by hard items: the composition shift behind the
//! apparent decay of pooled probe accuracy at large `t`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::trace_store::{
    validate_pack, CheckpointRecord, DifficultyBucket, ExampleTrace, TracePack, DEFAULT_POOLING_WINDOW,
    DEFAULT_PREFIX_GRID, SCHEMA_VERSION,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error("cannot read synth config: {0}")]
    Read(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketEffect {
    pub prior_correct: f64,
    pub signal_strength: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyEffect {
    pub easy: BucketEffect,
    pub hard: BucketEffect,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LengthCoupling {
    /// Lengths independent of label and difficulty: uniform over `length_range`,
    /// or the generation cap when no range is given.
    #[default]
    None,
    /// Log-normal lengths whose median depends on the difficulty bucket.
    DifficultyCoupled {
        easy_median: f64,
        hard_median: f64,
        /// Standard deviation of `ln(length)`.
        spread: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_examples: usize,
    pub hidden_dim: usize,
    /// Mean separation δ between the classes along the signal direction.
    pub signal_strength: f64,
    pub prior_correct: f64,
    #[serde(default)]
    pub length_coupling: LengthCoupling,
    /// Per-bucket prior and δ; when absent both buckets use the global values.
    #[serde(default)]
    pub difficulty_effect: Option<DifficultyEffect>,
    /// Separation between easy and hard items along a second direction orthogonal to the signal.
    #[serde(default)]
    pub difficulty_separation: f64,
    /// Fraction of the noise shared by all checkpoints of one example, in `[0, 1)`.
    #[serde(default = "default_checkpoint_correlation")]
    pub checkpoint_correlation: f64,
    /// Shift of log-entropy between incorrect and correct traces.
    #[serde(default = "default_entropy_label_correlation")]
    pub entropy_label_correlation: f64,
    #[serde(default)]
    pub length_range: Option<(u32, u32)>,
    #[serde(default = "default_grid")]
    pub prefix_grid: Vec<u32>,
    #[serde(default = "default_pooling_window")]
    pub pooling_window: u32,
    /// Longest possible reasoning length; defaults to the largest checkpoint.
    #[serde(default)]
    pub generation_cap: Option<u32>,
    pub seed: u64,
    #[serde(default = "default_model_name")]
    pub model_name: String,
    #[serde(default = "default_id_prefix")]
    pub id_prefix: String,
}

fn default_checkpoint_correlation() -> f64 {
    0.9
}
fn default_entropy_label_correlation() -> f64 {
    0.1
}
fn default_grid() -> Vec<u32> {
    DEFAULT_PREFIX_GRID.to_vec()
}
fn default_pooling_window() -> u32 {
    DEFAULT_POOLING_WINDOW
}
fn default_model_name() -> String {
    "synthetic".into()
}
fn default_id_prefix() -> String {
    "syn".into()
}

impl SynthConfig {
    /// Planted-signal config with uninformative (constant) lengths.
    pub fn planted(n_examples: usize, hidden_dim: usize, signal_strength: f64, seed: u64) -> Self {
        Self {
            n_examples,
            hidden_dim,
            signal_strength,
            prior_correct: 0.5,
            length_coupling: LengthCoupling::None,
            difficulty_effect: None,
            difficulty_separation: 0.0,
            checkpoint_correlation: default_checkpoint_correlation(),
            entropy_label_correlation: default_entropy_label_correlation(),
            length_range: None,
            prefix_grid: default_grid(),
            pooling_window: default_pooling_window(),
            generation_cap: None,
            seed,
            model_name: default_model_name(),
            id_prefix: default_id_prefix(),
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| SynthError::Read(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| SynthError::InvalidConfig(e.to_string()))
    }

    pub fn cap(&self) -> u32 {
        self.generation_cap
            .or_else(|| self.prefix_grid.iter().copied().max())
            .unwrap_or(1)
    }

    fn effect(&self, bucket: DifficultyBucket) -> BucketEffect {
        match (&self.difficulty_effect, bucket) {
            (Some(e), DifficultyBucket::Easy) => e.easy,
            (Some(e), DifficultyBucket::Hard) => e.hard,
            (None, _) => BucketEffect {
                prior_correct: self.prior_correct,
                signal_strength: self.signal_strength,
            },
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_examples < 4 {
            return bad(format!("n_examples must be >= 4, got {}", self.n_examples));
        }
        if self.hidden_dim < 2 {
            return bad(format!("hidden_dim must be >= 2, got {}", self.hidden_dim));
        }
        let mut effects = vec![BucketEffect {
            prior_correct: self.prior_correct,
            signal_strength: self.signal_strength,
        }];
        if let Some(e) = self.difficulty_effect {
            effects.extend([e.easy, e.hard]);
        }
        for e in effects {
            if !(e.prior_correct > 0.0 && e.prior_correct < 1.0) {
                return bad(format!("prior_correct must lie in (0, 1), got {}", e.prior_correct));
            }
            if !(e.signal_strength >= 0.0 && e.signal_strength.is_finite()) {
                return bad(format!("signal_strength must be finite and >= 0, got {}", e.signal_strength));
            }
        }
        if !(0.0..1.0).contains(&self.checkpoint_correlation) {
            return bad("checkpoint_correlation must lie in [0, 1)".into());
        }
        if !self.difficulty_separation.is_finite() || !self.entropy_label_correlation.is_finite() {
            return bad("difficulty_separation and entropy_label_correlation must be finite".into());
        }
        if self.prefix_grid.is_empty() || self.prefix_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("prefix_grid must be non-empty and strictly increasing".into());
        }
        if self.pooling_window == 0 || self.prefix_grid[0] < self.pooling_window {
            return bad("smallest checkpoint must be >= pooling_window > 0".into());
        }
        if let Some((lo, hi)) = self.length_range {
            if lo == 0 || lo > hi || hi > self.cap() {
                return bad(format!("length_range ({lo}, {hi}) must satisfy 0 < lo <= hi <= cap"));
            }
        }
        if let LengthCoupling::DifficultyCoupled {
            easy_median,
            hard_median,
            spread,
        } = self.length_coupling
        {
            if !(easy_median > 0.0 && hard_median > 0.0 && spread >= 0.0 && spread.is_finite()) {
                return bad("coupled length medians must be positive and spread >= 0".into());
            }
        }
        Ok(())
    }
}

/// `Φ(δ/√2)`: the AUC of the optimal score for two unit-variance isotropic
/// Gaussians whose means are `δ` apart.
pub fn bayes_auc_for(signal_strength: f64) -> f64 {
    std_normal().cdf(signal_strength / std::f64::consts::SQRT_2)
}

pub fn bayes_auc(config: &SynthConfig) -> f64 {
    bayes_auc_for(config.signal_strength)
}

/// Bayes AUC within one difficulty bucket.
pub fn bucket_bayes_auc(config: &SynthConfig, bucket: DifficultyBucket) -> f64 {
    bayes_auc_for(config.effect(bucket).signal_strength)
}

/// Separation δ whose Bayes AUC is `auc`: `√2 · Φ⁻¹(auc)`.
pub fn signal_for_auc(auc: f64) -> f64 {
    let n = std_normal();
    let mut x = n.inverse_cdf(auc);
    // polish the library quantile with Newton steps on Φ
    for _ in 0..3 {
        let density = n.pdf(x);
        if density > 0.0 {
            x -= (n.cdf(x) - auc) / density;
        }
    }
    std::f64::consts::SQRT_2 * x
}

fn std_normal() -> Normal {
    Normal::standard()
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
}

/// Seeded unit vectors `(u, v)` with `u ⟂ v`: the signal and difficulty directions.
pub fn planted_directions(config: &SynthConfig) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    directions(&mut rng, config.hidden_dim)
}

fn directions(rng: &mut ChaCha8Rng, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut u = gaussian_vec(rng, d);
    normalize(&mut u);
    let mut v = gaussian_vec(rng, d);
    let proj: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
    for (x, a) in v.iter_mut().zip(&u) {
        *x -= proj * a;
    }
    normalize(&mut v);
    (u, v)
}

pub fn generate(config: &SynthConfig) -> Result<TracePack, SynthError> {
    config.validate()?;
    let d = config.hidden_dim;
    let cap = config.cap();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (u, v) = directions(&mut rng, d);
    let rho = config.checkpoint_correlation;
    let fresh = (1.0 - rho * rho).sqrt();
    let min_t = config.prefix_grid[0];

    let mut examples = Vec::with_capacity(config.n_examples);
    for i in 0..config.n_examples {
        let bucket = if i % 2 == 0 {
            DifficultyBucket::Easy
        } else {
            DifficultyBucket::Hard
        };
        let raw_level = match bucket {
            DifficultyBucket::Easy => rng.random_range(1..=2u8),
            DifficultyBucket::Hard => rng.random_range(4..=5u8),
        };
        let effect = config.effect(bucket);
        let correct = rng.random_bool(effect.prior_correct);

        let reasoning_length = match config.length_coupling {
            LengthCoupling::None => match config.length_range {
                Some((lo, hi)) => rng.random_range(lo..=hi),
                None => cap,
            },
            LengthCoupling::DifficultyCoupled {
                easy_median,
                hard_median,
                spread,
            } => {
                let median = match bucket {
                    DifficultyBucket::Easy => easy_median,
                    DifficultyBucket::Hard => hard_median,
                };
                let z: f64 = rng.sample(StandardNormal);
                let len = (median.ln() + spread * z).exp().round();
                (len.clamp(min_t as f64, cap as f64)) as u32
            }
        };

        let label_sign = if correct { 1.0 } else { -1.0 };
        let bucket_sign = match bucket {
            DifficultyBucket::Easy => 1.0,
            DifficultyBucket::Hard => -1.0,
        };
        let shift: Vec<f64> = u
            .iter()
            .zip(&v)
            .map(|(a, b)| {
                label_sign * effect.signal_strength / 2.0 * a
                    + bucket_sign * config.difficulty_separation / 2.0 * b
            })
            .collect();
        let shared = gaussian_vec(&mut rng, d);
        let entropy_base: f64 = 0.2 * rng.sample::<f64, _>(StandardNormal);
        let entropy_shift = -label_sign * config.entropy_label_correlation / 2.0;

        let mut checkpoints = Vec::new();
        for &t in config.prefix_grid.iter().filter(|&&t| t <= reasoning_length) {
            let own = gaussian_vec(&mut rng, d);
            let pooled_state = shift
                .iter()
                .zip(shared.iter().zip(&own))
                .map(|(m, (s, e))| (m + rho * s + fresh * e) as f32)
                .collect();
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            checkpoints.push(CheckpointRecord {
                t,
                pooled_state,
                mean_entropy: (0.8f64.ln() + entropy_base + entropy_shift + 0.1 * z1).exp(),
                window_entropy: (0.6f64.ln() + entropy_base + entropy_shift + 0.3 * z2).exp(),
            });
        }

        examples.push(ExampleTrace {
            example_id: format!("{}{i:06}", config.id_prefix),
            difficulty_bucket: bucket,
            raw_level,
            correct,
            reasoning_length,
            checkpoints,
        });
    }

    let pack = TracePack {
        schema_version: SCHEMA_VERSION,
        model_name: config.model_name.clone(),
        hidden_dim: d,
        prefix_grid: config.prefix_grid.clone(),
        pooling_window: config.pooling_window,
        examples,
    };
    debug_assert!(validate_pack(&pack).is_empty());
    Ok(pack)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bayes_auc_limits() {
        assert_eq!(bayes_auc_for(0.0), 0.5);
        assert!(bayes_auc_for(40.0) > 1.0 - 1e-12);
        assert!((bayes_auc_for(signal_for_auc(0.85)) - 0.85).abs() < 1e-12);
    }

    #[test]
    fn generated_pack_is_valid_and_deterministic() {
        let mut cfg = SynthConfig::planted(40, 5, 1.0, 3);
        cfg.length_coupling = LengthCoupling::DifficultyCoupled {
            easy_median: 40.0,
            hard_median: 300.0,
            spread: 0.8,
        };
        let a = generate(&cfg).unwrap();
        assert!(validate_pack(&a).is_empty());
        assert_eq!(a, generate(&cfg).unwrap());
        cfg.seed = 4;
        assert_ne!(a, generate(&cfg).unwrap());
    }

    #[test]
    fn buckets_alternate_and_levels_match() {
        let pack = generate(&SynthConfig::planted(10, 3, 1.0, 0)).unwrap();
        for (i, ex) in pack.examples.iter().enumerate() {
            let expect = if i % 2 == 0 {
                DifficultyBucket::Easy
            } else {
                DifficultyBucket::Hard
            };
            assert_eq!(ex.difficulty_bucket, expect);
            assert_eq!(DifficultyBucket::for_level(ex.raw_level), Some(expect));
            assert_eq!(ex.reasoning_length, 512);
        }
    }

    #[test]
    fn directions_are_orthonormal() {
        let (u, v) = planted_directions(&SynthConfig::planted(10, 7, 1.0, 11));
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        assert!((dot(&u, &u) - 1.0).abs() < 1e-12);
        assert!((dot(&v, &v) - 1.0).abs() < 1e-12);
        assert!(dot(&u, &v).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs() {
        let ok = SynthConfig::planted(10, 3, 1.0, 0);
        let mut c = ok.clone();
        c.n_examples = 3;
        assert!(generate(&c).is_err());
        let mut c = ok.clone();
        c.hidden_dim = 1;
        assert!(generate(&c).is_err());
        let mut c = ok.clone();
        c.prior_correct = 1.0;
        assert!(generate(&c).is_err());
        let mut c = ok;
        c.length_range = Some((10, 1000));
        assert!(generate(&c).is_err());
    }
}
