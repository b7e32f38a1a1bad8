//! Compare the hidden-state probe against entropy and length baselines.
//!
//! cargo run --release --example baseline_margins

use cotprobe::analysis::{margin_table, margins_csv, sweep, AnalysisConfig, CohortFilter, FeatureSet};
use cotprobe::synth::{generate, signal_for_auc, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pack = generate(&SynthConfig::planted(2000, 16, signal_for_auc(0.8), 4))?;
    let config = AnalysisConfig::default();
    let cohorts = [CohortFilter::ALL];
    let hidden = sweep(&pack, &pack.prefix_grid, &cohorts, &[FeatureSet::HiddenState], &config)?;
    let baselines = sweep(
        &pack,
        &pack.prefix_grid,
        &cohorts,
        &[FeatureSet::Entropy, FeatureSet::Length, FeatureSet::EntropyLength],
        &config,
    )?;
    print!("{}", margins_csv(&margin_table(&hidden, &baselines)?));
    Ok(())
}
