//! Run a small sweep and render its SVG charts and summary table into a directory.
//!
//! cargo run --release --example render_report [out_dir]

use cotprobe::analysis::{sweep, AnalysisConfig, CohortFilter, FeatureSet};
use cotprobe::report::render_report;
use cotprobe::synth::{generate, signal_for_auc, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "cotprobe_report".into());
    let mut config = SynthConfig::planted(1500, 16, signal_for_auc(0.85), 8);
    config.length_range = Some((4, 512));
    let pack = generate(&config)?;
    let result = sweep(
        &pack,
        &pack.prefix_grid,
        &[CohortFilter::ALL, CohortFilter::EASY, CohortFilter::HARD],
        &[FeatureSet::HiddenState, FeatureSet::Length],
        &AnalysisConfig::default(),
    )?;
    for path in render_report(&result, &out)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
