//! Train a logistic probe by hand: stratified split, PCA, class weights, held-out metrics.
//!
//! cargo run --example train_probe

use cotprobe::linalg_pca::fit_pca;
use cotprobe::metrics::EvalReport;
use cotprobe::probe::{balanced_class_weights, predict_scores, stratified_split, train_probe, SplitSpec};
use cotprobe::synth::{bayes_auc, generate, SynthConfig};
use cotprobe::trace_store::checkpoint_matrix;
use nalgebra::DMatrix;

fn rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |r, c| x[(idx[r], c)])
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = SynthConfig::planted(2000, 32, 1.4657, 5);
    config.prior_correct = 0.7;
    let pack = generate(&config)?;
    let m = checkpoint_matrix(&pack, 4)?;

    let split = stratified_split(&m.labels, &SplitSpec { train_fraction: 0.8, seed: 1 })?;
    let y_train: Vec<bool> = split.train.iter().map(|&i| m.labels[i]).collect();
    let y_test: Vec<bool> = split.test.iter().map(|&i| m.labels[i]).collect();
    let x_train = rows(&m.x, &split.train);

    let pca = fit_pca(&x_train, 128)?;
    let cw = balanced_class_weights(&y_train)?;
    println!("class weights: correct {:.3}, incorrect {:.3}", cw.of(true), cw.of(false));
    let model = train_probe(&pca.project(&x_train)?, &y_train, cw, 1.0, 1e-8, 500)?.with_pca(pca);

    let scores = predict_scores(&model, &rows(&m.x, &split.test))?;
    let report = EvalReport::compute(&scores, &y_test, 0.5)?;
    println!(
        "held-out n={} prior={:.3} accuracy={:.3} auc={:.3} (Bayes optimum {:.3})",
        report.n,
        report.class_prior,
        report.accuracy,
        report.roc_auc.unwrap_or(f64::NAN),
        bayes_auc(&config)
    );
    Ok(())
}
