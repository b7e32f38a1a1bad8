//! Train per-checkpoint probes on one half of a pack and replay exit policies on the other.
//!
//! cargo run --release --example early_exit

use std::collections::BTreeMap;

use cotprobe::analysis::{fit_checkpoint_probe, AnalysisConfig, CohortFilter};
use cotprobe::earlyexit::{reports_csv, threshold_sweep, ExitDirection};
use cotprobe::synth::{generate, signal_for_auc, SynthConfig};
use cotprobe::trace_store::TracePack;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = SynthConfig::planted(2000, 16, signal_for_auc(0.85), 12);
    config.length_range = Some((32, 512));
    let full = generate(&config)?;
    let mut train = full.clone();
    let eval = TracePack { examples: train.examples.split_off(1000), ..full };

    let probes = [4u32, 16, 64]
        .into_iter()
        .map(|t| Ok((t, fit_checkpoint_probe(&train, t, &CohortFilter::ALL, &AnalysisConfig::default(), "train-half")?)))
        .collect::<Result<BTreeMap<_, _>, Box<dyn std::error::Error>>>()?;

    let thresholds: Vec<f64> = (0..=10).map(|i| f64::from(i) / 10.0).collect();
    for direction in [ExitDirection::HaltWhenConfidentCorrect, ExitDirection::FlagWhenConfidentIncorrect] {
        println!("{direction:?}");
        print!("{}", reports_csv(&threshold_sweep(&eval, &probes, direction, &thresholds)?));
    }
    Ok(())
}
