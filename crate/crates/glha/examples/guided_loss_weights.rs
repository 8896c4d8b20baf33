//! Derives the guided class weights for one prediction state and shows the
//! property they enforce: minimizing the reweighted loss moves the discrete
//! F-measure up, with the target order `n` steering the precision/recall
//! trade-off.
//!
//!     cargo run --example guided_loss_weights

use glha::guided::{
    f_measure_from_counts, guided_weights, verify_negative_correlation, CategoryLosses,
    PairCounts,
};

fn main() {
    // One pair's confusion state: 120 true inliers of which 30 are currently
    // missed, 380 outliers of which 25 are let through.
    let counts = PairCounts {
        n_pos: 120,
        n_neg: 380,
        x: 30,
        y: 25,
    };
    // Mean per-category classification losses at that state. Misclassified
    // categories must cost more than their correct counterparts.
    let losses = CategoryLosses {
        tp: Some(0.10),
        fn_: Some(1.40),
        fp: Some(1.10),
        tn: Some(0.08),
    };

    println!("confusion: {} FN / {} pos, {} FP / {} neg", counts.x, counts.n_pos, counts.y, counts.n_neg);
    println!("\n  n    lambda     mu      F_n(now)   target emphasis");
    for &n in &[0.25, 0.5, 1.0, 2.0, 4.0] {
        let w = guided_weights(&counts, &losses, n);
        let f = f_measure_from_counts(counts.n_pos, counts.x, counts.y, n);
        let emphasis = if w.lambda > w.mu {
            "recall (fix misses)"
        } else {
            "precision (fix false alarms)"
        };
        println!(
            "{:>5}   {:.4}   {:.4}   {:.4}     {}",
            n, w.lambda, w.mu, f, emphasis
        );
        assert!(!w.fallback);
    }

    // The weights are chosen so the loss gradient and the F-measure gradient
    // point in opposite half-spaces: any error step that lowers the weighted
    // loss cannot lower F_n. The checker evaluates that on the exact unit
    // steps of the count lattice.
    let n = 1.0;
    let report = verify_negative_correlation(&counts, &losses, n);
    println!("\nalignment check at n = {n}:");
    println!("  weight-balance residual  {:.2e}", report.eq_residual);
    println!("  max loss*F product (linearized steps) {:.2e}", report.max_linear_product);
    println!("  max loss*F product (true unit steps)  {:.2e}", report.max_true_product);
    println!("  passes: {}", report.passes());

    // Degenerate states fall back to balanced weights instead of failing.
    let empty = PairCounts {
        n_pos: 0,
        n_neg: 500,
        x: 0,
        y: 12,
    };
    let w = guided_weights(&empty, &losses, 1.0);
    println!(
        "\nno positives in the pair -> fallback to balanced weights: lambda = {}, fallback = {}",
        w.lambda, w.fallback
    );
}
