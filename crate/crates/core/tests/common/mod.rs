#![allow(dead_code)]

use std::collections::BTreeMap;

use cotprobe::earlyexit::{ExitDirection, ExitPolicy, ExitReport, Thresholds, TOKEN_ACCOUNTING};
use cotprobe::probe::{predict_scores, ProbeModel};
use cotprobe::trace_store::{checkpoint_matrix, CheckpointRecord, DifficultyBucket, ExampleTrace, TracePack};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A valid pack with random lengths, levels, labels and states.
pub fn random_pack(seed: u64, n: usize, hidden_dim: usize, grid: &[u32]) -> TracePack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pack = TracePack::new("random", hidden_dim);
    pack.prefix_grid = grid.to_vec();
    pack.pooling_window = grid[0].min(4);
    let max_len = grid.last().copied().unwrap_or(4) + 40;
    for i in 0..n {
        let raw_level = [1u8, 2, 4, 5][rng.random_range(0..4)];
        let reasoning_length = rng.random_range(1..=max_len);
        let checkpoints = grid
            .iter()
            .filter(|&&t| t <= reasoning_length)
            .map(|&t| CheckpointRecord {
                t,
                pooled_state: (0..hidden_dim).map(|_| rng.random_range(-3.0f32..3.0)).collect(),
                mean_entropy: rng.random_range(0.0..3.0),
                window_entropy: rng.random_range(0.0..3.0),
            })
            .collect();
        pack.examples.push(ExampleTrace {
            example_id: format!("r{seed}-{i}"),
            difficulty_bucket: DifficultyBucket::for_level(raw_level).unwrap(),
            raw_level,
            correct: rng.random_bool(0.5),
            reasoning_length,
            checkpoints,
        });
    }
    pack
}

/// O(n²) Mann–Whitney statistic by explicit pair enumeration.
pub fn brute_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut credit = 0.0;
    let mut pairs = 0u64;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                credit += 1.0;
            } else if scores[i] == scores[j] {
                credit += 0.5;
            }
        }
    }
    (pairs > 0).then(|| credit / pairs as f64)
}

/// Walks every trace independently of the library's replay. Scores come from
/// scoring each checkpoint matrix with `predict_scores`.
pub fn brute_replay(pack: &TracePack, probes: &BTreeMap<u32, ProbeModel>, policy: &ExitPolicy) -> ExitReport {
    let mut score_at: Vec<BTreeMap<u32, f64>> = vec![BTreeMap::new(); pack.len()];
    for (&t, probe) in probes {
        if !pack.prefix_grid.contains(&t) {
            continue;
        }
        let m = checkpoint_matrix(pack, t).unwrap();
        if m.indices.is_empty() {
            continue;
        }
        let s = predict_scores(probe, &m.x).unwrap();
        for (&i, v) in m.indices.iter().zip(s) {
            score_at[i].insert(t, v);
        }
    }
    let threshold_for = |t: u32| match &policy.thresholds {
        Thresholds::Global(v) => Some(*v),
        Thresholds::PerCheckpoint(m) => m.get(&t).copied(),
    };
    let mut full: u64 = 0;
    let mut charged: u64 = 0;
    let mut hist = BTreeMap::new();
    let (mut exited, mut decided, mut right) = (0, 0, 0);
    for (ex, scores) in pack.examples.iter().zip(&score_at) {
        full += u64::from(ex.reasoning_length);
        let mut exit_t = None;
        let mut last_decision = None;
        for (&t, &s) in scores {
            let Some(th) = threshold_for(t) else { continue };
            last_decision = Some(s >= 0.5);
            let conf = match policy.direction {
                ExitDirection::HaltWhenConfidentCorrect => s,
                ExitDirection::FlagWhenConfidentIncorrect => 1.0 - s,
            };
            if conf >= th {
                exit_t = Some(t);
                break;
            }
        }
        match exit_t {
            Some(t) => {
                charged += u64::from(t);
                exited += 1;
                *hist.entry(t).or_insert(0usize) += 1;
            }
            None => charged += u64::from(ex.reasoning_length),
        }
        if let Some(d) = last_decision {
            decided += 1;
            if d == ex.correct {
                right += 1;
            }
        }
    }
    let n = pack.len();
    let full_mean = full as f64 / n as f64;
    let policy_mean = charged as f64 / n as f64;
    ExitReport {
        threshold: match policy.thresholds {
            Thresholds::Global(v) => Some(v),
            Thresholds::PerCheckpoint(_) => None,
        },
        direction: policy.direction,
        n_examples: n,
        mean_tokens_full: full_mean,
        mean_tokens_policy: policy_mean,
        savings_fraction: 1.0 - policy_mean / full_mean,
        n_exited: exited,
        flagged_at_histogram: hist,
        n_decided: decided,
        decision_quality: (decided > 0).then(|| right as f64 / decided as f64),
        token_accounting: TOKEN_ACCOUNTING.to_owned(),
    }
}

pub fn frobenius(m: &nalgebra::DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}
