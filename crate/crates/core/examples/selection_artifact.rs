//! Difficulty-coupled lengths: pooled AUC falls with t while per-bucket AUC stays flat.
//!
//! cargo run --release --example selection_artifact

use cotprobe::analysis::{survival_counts, sweep, AnalysisConfig, CohortFilter, FeatureSet};
use cotprobe::synth::{generate, signal_for_auc, BucketEffect, DifficultyEffect, LengthCoupling, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = SynthConfig {
        difficulty_effect: Some(DifficultyEffect {
            easy: BucketEffect { prior_correct: 0.85, signal_strength: signal_for_auc(0.82) },
            hard: BucketEffect { prior_correct: 0.32, signal_strength: signal_for_auc(0.72) },
        }),
        difficulty_separation: 4.0,
        length_coupling: LengthCoupling::DifficultyCoupled { easy_median: 200.0, hard_median: 2000.0, spread: 1.0 },
        ..SynthConfig::planted(100_000, 8, 1.0, 1)
    };
    let pack = generate(&config)?;
    let cohorts = [CohortFilter::ALL, CohortFilter::EASY, CohortFilter::HARD];
    let result = sweep(&pack, &pack.prefix_grid, &cohorts, &[FeatureSet::HiddenState], &AnalysisConfig::default())?;

    let survival: Vec<Vec<(u32, usize)>> = cohorts.iter().map(|c| survival_counts(&pack, c)).collect();
    println!("{:>5} {:>16} {:>16} {:>16}", "t", "all auc (n)", "easy auc (n)", "hard auc (n)");
    for (i, &t) in pack.prefix_grid.iter().enumerate() {
        let cell = |k: usize| {
            let auc = result.rows_for(cohorts[k], FeatureSet::HiddenState).nth(i).and_then(|r| r.roc_auc());
            format!("{:.3} ({})", auc.unwrap_or(f64::NAN), survival[k][i].1)
        };
        println!("{t:>5} {:>16} {:>16} {:>16}", cell(0), cell(1), cell(2));
    }
    Ok(())
}
