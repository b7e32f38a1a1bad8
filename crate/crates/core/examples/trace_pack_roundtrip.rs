//! Write a synthetic pack to disk, load it back, validate it and print survival counts.
//!
//! cargo run --example trace_pack_roundtrip

use cotprobe::analysis::{survival_counts, CohortFilter};
use cotprobe::synth::{generate, SynthConfig};
use cotprobe::trace_store::{load_pack, validate_pack, write_pack};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = SynthConfig::planted(300, 16, 1.5, 42);
    config.length_range = Some((4, 512));
    let pack = generate(&config)?;

    let dir = std::env::temp_dir().join("cotprobe_roundtrip_pack");
    if dir.exists() {
        std::fs::remove_dir_all(&dir)?;
    }
    write_pack(&pack, &dir)?;
    let loaded = load_pack(&dir)?;
    assert_eq!(loaded, pack);
    println!("wrote and reloaded {} examples from {}", loaded.len(), dir.display());
    println!("{} violations", validate_pack(&loaded).len());

    println!("{:>5}  survivors", "t");
    for (t, n) in survival_counts(&loaded, &CohortFilter::ALL) {
        println!("{t:>5}  {n}");
    }
    Ok(())
}
