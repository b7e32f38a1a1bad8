//! Sweep every prefix length of a planted pack and print the summary table.
//!
//! cargo run --release --example prefix_sweep

use cotprobe::analysis::{sweep, AnalysisConfig, CohortFilter, FeatureSet};
use cotprobe::report::summary_table;
use cotprobe::synth::{generate, signal_for_auc, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = SynthConfig::planted(3000, 32, signal_for_auc(0.85), 9);
    config.length_range = Some((4, 512));
    let pack = generate(&config)?;
    // almost nothing survives to the last checkpoint when lengths stop at 512
    let grid = &pack.prefix_grid[..pack.prefix_grid.len() - 1];
    let result = sweep(
        &pack,
        grid,
        &[CohortFilter::ALL, CohortFilter::HARD],
        &[FeatureSet::HiddenState, FeatureSet::EntropyLength],
        &AnalysisConfig::default(),
    )?;
    print!("{}", summary_table(&result));
    Ok(())
}
