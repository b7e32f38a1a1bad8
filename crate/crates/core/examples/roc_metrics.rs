//! ROC-AUC, accuracy and the ROC curve on a small hand-written score vector.
//!
//! cargo run --example roc_metrics

use cotprobe::metrics::{accuracy, roc_auc, roc_points, trapezoid_area};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scores = [0.9, 0.8, 0.8, 0.6, 0.55, 0.4, 0.3, 0.2];
    let labels = [true, true, false, true, false, true, false, false];
    let auc = roc_auc(&scores, &labels)?.expect("both classes present");
    println!("auc = {auc:.4} (ties count one half)");
    println!("accuracy at 0.5 = {:.3}", accuracy(&scores, &labels, 0.5)?);
    let points = roc_points(&scores, &labels)?;
    for (fpr, tpr) in &points {
        println!("fpr {fpr:.2}  tpr {tpr:.2}");
    }
    println!("trapezoid area = {:.4}", trapezoid_area(&points));
    println!("single-class input gives {:?}", roc_auc(&[0.1, 0.2], &[true, true])?);
    Ok(())
}
