//! Offline replay of probe-gated halting.
//!
//! Each trace is walked through its checkpoints in order. At every checkpoint
//! with a probe, the probe's confidence is compared with the policy threshold;
//! the first crossing ends the trace and charges `t` tokens. Traces that never
//! cross are charged their full reasoning length. Probe inference cost is not
//! charged.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::probe::{predict_scores, ProbeError, ProbeModel};
use crate::trace_store::TracePack;

pub const TOKEN_ACCOUNTING: &str = "exit at checkpoint t charges t tokens; probe cost not charged";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExitError {
    #[error("pack has no examples")]
    EmptyPack,
    #[error("no probes supplied")]
    NoProbes,
    #[error("policy consults t={0} but no probe exists for it")]
    MissingProbe(u32),
    #[error("probe for t={0} has no provenance record; cannot verify it was trained on other data")]
    MissingProvenance(u32),
    #[error("probe for t={t} was trained on example {example_id:?}, which is in the simulated pack")]
    ProvenanceOverlap { t: u32, example_id: String },
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitDirection {
    /// Stop as soon as the probe is confident the answer will be correct.
    HaltWhenConfidentCorrect,
    /// Stop (to re-run, reflect or escalate) once the probe is confident it will be wrong.
    FlagWhenConfidentIncorrect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Thresholds {
    Global(f64),
    PerCheckpoint(BTreeMap<u32, f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitPolicy {
    pub thresholds: Thresholds,
    pub direction: ExitDirection,
}

impl ExitPolicy {
    pub fn global(threshold: f64, direction: ExitDirection) -> Self {
        Self {
            thresholds: Thresholds::Global(threshold),
            direction,
        }
    }

    fn threshold_at(&self, t: u32) -> Option<f64> {
        match &self.thresholds {
            Thresholds::Global(v) => Some(*v),
            Thresholds::PerCheckpoint(m) => m.get(&t).copied(),
        }
    }

    fn confidence(&self, score: f64) -> f64 {
        match self.direction {
            ExitDirection::HaltWhenConfidentCorrect => score,
            ExitDirection::FlagWhenConfidentIncorrect => 1.0 - score,
        }
    }

    fn validate(&self) -> Result<(), ExitError> {
        let values: Vec<f64> = match &self.thresholds {
            Thresholds::Global(v) => vec![*v],
            Thresholds::PerCheckpoint(m) => m.values().copied().collect(),
        };
        match values.into_iter().find(|v| !(0.0..=1.0).contains(v)) {
            Some(v) => Err(ExitError::InvalidThreshold(v)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitReport {
    /// Set for reports produced by a global-threshold sweep.
    pub threshold: Option<f64>,
    pub direction: ExitDirection,
    pub n_examples: usize,
    pub mean_tokens_full: f64,
    pub mean_tokens_policy: f64,
    pub savings_fraction: f64,
    pub n_exited: usize,
    /// Exit checkpoint → number of traces stopped there.
    pub flagged_at_histogram: BTreeMap<u32, usize>,
    /// Traces with at least one probed checkpoint.
    pub n_decided: usize,
    /// Accuracy of `score ≥ 0.5` at the exit checkpoint (or the last probed one) vs the label.
    pub decision_quality: Option<f64>,
    pub token_accounting: String,
}

/// Probe scores of every trace at every probed checkpoint it survives to.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    /// Per example: `(t, score)` in increasing `t`.
    pub scores: Vec<Vec<(u32, f64)>>,
}

/// Refuses probes whose training data overlaps the pack, or whose origin is unknown.
pub fn check_provenance(pack: &TracePack, probes: &BTreeMap<u32, ProbeModel>) -> Result<(), ExitError> {
    let ids: HashSet<&str> = pack.example_ids().collect();
    for (&t, probe) in probes {
        let prov = probe.provenance.as_ref().ok_or(ExitError::MissingProvenance(t))?;
        if let Some(id) = prov.training_ids.iter().find(|id| ids.contains(id.as_str())) {
            return Err(ExitError::ProvenanceOverlap {
                t,
                example_id: id.clone(),
            });
        }
    }
    Ok(())
}

pub fn score_table(pack: &TracePack, probes: &BTreeMap<u32, ProbeModel>) -> Result<ScoreTable, ExitError> {
    let mut scores = vec![Vec::new(); pack.len()];
    for &t in &pack.prefix_grid {
        let Some(probe) = probes.get(&t) else { continue };
        let rows: Vec<usize> = pack
            .examples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.survives(t) && e.checkpoint(t).is_some())
            .map(|(i, _)| i)
            .collect();
        if rows.is_empty() {
            continue;
        }
        let x = DMatrix::from_fn(rows.len(), pack.hidden_dim, |r, c| {
            f64::from(pack.examples[rows[r]].checkpoint(t).expect("filtered").pooled_state[c])
        });
        let s = predict_scores(probe, &x)?;
        for (&i, v) in rows.iter().zip(s) {
            scores[i].push((t, v));
        }
    }
    Ok(ScoreTable { scores })
}

fn replay(pack: &TracePack, table: &ScoreTable, policy: &ExitPolicy) -> ExitReport {
    let n = pack.len();
    let mut full = 0.0;
    let mut charged = 0.0;
    let mut histogram = BTreeMap::new();
    let mut n_exited = 0;
    let mut n_decided = 0;
    let mut n_right = 0;
    for (ex, row) in pack.examples.iter().zip(&table.scores) {
        full += f64::from(ex.reasoning_length);
        let mut cost = f64::from(ex.reasoning_length);
        let mut decision = None;
        for &(t, score) in row {
            let Some(threshold) = policy.threshold_at(t) else { continue };
            decision = Some(score >= 0.5);
            if policy.confidence(score) >= threshold {
                cost = f64::from(t);
                *histogram.entry(t).or_insert(0) += 1;
                n_exited += 1;
                break;
            }
        }
        charged += cost;
        if let Some(d) = decision {
            n_decided += 1;
            if d == ex.correct {
                n_right += 1;
            }
        }
    }
    let mean_tokens_full = full / n as f64;
    let mean_tokens_policy = charged / n as f64;
    ExitReport {
        threshold: match policy.thresholds {
            Thresholds::Global(v) => Some(v),
            Thresholds::PerCheckpoint(_) => None,
        },
        direction: policy.direction,
        n_examples: n,
        mean_tokens_full,
        mean_tokens_policy,
        savings_fraction: 1.0 - mean_tokens_policy / mean_tokens_full,
        n_exited,
        flagged_at_histogram: histogram,
        n_decided,
        decision_quality: (n_decided > 0).then(|| n_right as f64 / n_decided as f64),
        token_accounting: TOKEN_ACCOUNTING.to_owned(),
    }
}

fn prepare(
    pack: &TracePack,
    probes: &BTreeMap<u32, ProbeModel>,
    policy: &ExitPolicy,
) -> Result<(), ExitError> {
    if pack.is_empty() {
        return Err(ExitError::EmptyPack);
    }
    if probes.is_empty() {
        return Err(ExitError::NoProbes);
    }
    policy.validate()?;
    if let Thresholds::PerCheckpoint(m) = &policy.thresholds {
        if let Some(&t) = m.keys().find(|t| !probes.contains_key(t)) {
            return Err(ExitError::MissingProbe(t));
        }
    }
    check_provenance(pack, probes)
}

pub fn simulate(
    pack: &TracePack,
    probes: &BTreeMap<u32, ProbeModel>,
    policy: &ExitPolicy,
) -> Result<ExitReport, ExitError> {
    prepare(pack, probes, policy)?;
    let table = score_table(pack, probes)?;
    Ok(replay(pack, &table, policy))
}

/// One report per global threshold, sharing a single pass of probe scoring.
pub fn threshold_sweep(
    pack: &TracePack,
    probes: &BTreeMap<u32, ProbeModel>,
    direction: ExitDirection,
    thresholds: &[f64],
) -> Result<Vec<ExitReport>, ExitError> {
    let policies: Vec<ExitPolicy> = thresholds
        .iter()
        .map(|&v| ExitPolicy::global(v, direction))
        .collect();
    for p in &policies {
        prepare(pack, probes, p)?;
    }
    if policies.is_empty() {
        return Ok(Vec::new());
    }
    let table = score_table(pack, probes)?;
    Ok(policies.par_iter().map(|p| replay(pack, &table, p)).collect())
}

pub fn reports_csv(reports: &[ExitReport]) -> String {
    let mut out = String::from(
        "threshold,direction,n_examples,mean_tokens_full,mean_tokens_policy,savings_fraction,n_exited,decision_quality\n",
    );
    for r in reports {
        let direction = match r.direction {
            ExitDirection::HaltWhenConfidentCorrect => "halt_when_confident_correct",
            ExitDirection::FlagWhenConfidentIncorrect => "flag_when_confident_incorrect",
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.threshold.map(|v| v.to_string()).unwrap_or_default(),
            direction,
            r.n_examples,
            r.mean_tokens_full,
            r.mean_tokens_policy,
            r.savings_fraction,
            r.n_exited,
            r.decision_quality.map(|v| v.to_string()).unwrap_or_default()
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::Provenance;

    fn constant_probe(logit: f64, trained_on: &[&str]) -> ProbeModel {
        ProbeModel {
            weights: vec![0.0, 0.0],
            intercept: logit,
            lambda: 1.0,
            feature_means: vec![0.0, 0.0],
            feature_scales: vec![1.0, 1.0],
            pca: None,
            provenance: Some(Provenance {
                pack: "other".into(),
                t: 4,
                cohort: "all".into(),
                training_ids: trained_on.iter().map(|s| s.to_string()).collect(),
            }),
        }
    }

    fn pack() -> TracePack {
        let mut cfg = crate::synth::SynthConfig::planted(12, 2, 1.0, 1);
        cfg.length_range = Some((8, 512));
        crate::synth::generate(&cfg).unwrap()
    }

    #[test]
    fn per_checkpoint_threshold_needs_a_probe() {
        let p = pack();
        let probes = BTreeMap::from([(4, constant_probe(0.0, &[]))]);
        let policy = ExitPolicy {
            thresholds: Thresholds::PerCheckpoint(BTreeMap::from([(4, 0.5), (8, 0.5)])),
            direction: ExitDirection::HaltWhenConfidentCorrect,
        };
        assert_eq!(simulate(&p, &probes, &policy), Err(ExitError::MissingProbe(8)));
    }

    #[test]
    fn overlap_and_missing_provenance_are_refused() {
        let p = pack();
        let probes = BTreeMap::from([(4, constant_probe(0.0, &["x", "syn000003"]))]);
        let policy = ExitPolicy::global(0.5, ExitDirection::HaltWhenConfidentCorrect);
        assert!(matches!(
            simulate(&p, &probes, &policy),
            Err(ExitError::ProvenanceOverlap { t: 4, .. })
        ));
        let mut bare = constant_probe(0.0, &[]);
        bare.provenance = None;
        assert_eq!(
            simulate(&p, &BTreeMap::from([(8, bare)]), &policy),
            Err(ExitError::MissingProvenance(8))
        );
    }

    #[test]
    fn threshold_range_is_checked() {
        let p = pack();
        let probes = BTreeMap::from([(4, constant_probe(0.0, &[]))]);
        let policy = ExitPolicy::global(1.5, ExitDirection::HaltWhenConfidentCorrect);
        assert_eq!(simulate(&p, &probes, &policy), Err(ExitError::InvalidThreshold(1.5)));
    }

    #[test]
    fn flag_direction_uses_complement() {
        let p = pack();
        // score = sigmoid(-3) ≈ 0.047: confidently incorrect everywhere
        let probes = BTreeMap::from([(8, constant_probe(-3.0, &[]))]);
        let r = simulate(&p, &probes, &ExitPolicy::global(0.9, ExitDirection::FlagWhenConfidentIncorrect)).unwrap();
        assert_eq!(r.n_exited, 12);
        assert_eq!(r.flagged_at_histogram, BTreeMap::from([(8, 12)]));
        let r = simulate(&p, &probes, &ExitPolicy::global(0.9, ExitDirection::HaltWhenConfidentCorrect)).unwrap();
        assert_eq!(r.n_exited, 0);
        assert_eq!(r.savings_fraction, 0.0);
    }
}
