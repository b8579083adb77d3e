//! Rank-based AUC with ties, the ROC curve and multi-seed summaries.
//!
//! cargo run --example roc_metrics

use harmonize::metrics::{mean_std, roc_auc, roc_csv, roc_curve, trapezoid_area, ScoredSet};

fn main() -> harmonize::Result<()> {
    let scores = vec![0.9, 0.8, 0.8, 0.7, 0.55, 0.55, 0.4, 0.3, 0.2, 0.1];
    let labels = vec![true, true, false, true, false, true, false, false, true, false];
    let set = ScoredSet::new(scores, labels);
    let auc = roc_auc(&set)?;
    let curve = roc_curve(&set)?;
    println!("AUC (midrank) {auc:.4}, trapezoid under ROC {:.4}", trapezoid_area(&curve));
    print!("{}", roc_csv(&curve));

    let (mean, std) = mean_std(&[0.81, 0.84, 0.79]);
    println!("three seeds: {mean:.3} ± {std:.3} (population std)");
    Ok(())
}
