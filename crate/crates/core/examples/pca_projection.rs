//! Fit PCA to one checkpoint's hidden states and inspect the explained variance.
//!
//! cargo run --example pca_projection

use cotprobe::linalg_pca::fit_pca;
use cotprobe::synth::{generate, signal_for_auc, SynthConfig};
use cotprobe::trace_store::checkpoint_matrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pack = generate(&SynthConfig::planted(500, 32, signal_for_auc(0.85), 3))?;
    let m = checkpoint_matrix(&pack, 4)?;
    let pca = fit_pca(&m.x, 8)?;
    println!("input dim {}, kept {} components", pca.input_dim(), pca.n_components());
    let total: f64 = pca.explained_variance.iter().sum();
    for (i, v) in pca.explained_variance.iter().enumerate() {
        println!("component {i}: variance {v:.4} ({:.1}% of kept)", 100.0 * v / total);
    }
    let z = pca.project(&m.x)?;
    let back = pca.reconstruct(&z)?;
    let err = (&back - &m.x).norm() / m.x.norm();
    println!("relative reconstruction error with {} of 32 components: {err:.3}", pca.n_components());
    Ok(())
}
