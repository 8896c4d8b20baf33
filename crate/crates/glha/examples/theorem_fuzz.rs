//! Fuzzes the descent/F-measure alignment guarantee over random count
//! states and several F orders, reporting residuals and the fallback rate.
//!
//!     cargo run --example theorem_fuzz

use glha::guided::run_theorem_fuzz;
use std::time::Instant;

fn main() {
    let guidance = [0.2, 0.5, 1.0, 2.0];
    let samples = 5_000;
    let start = Instant::now();
    let report = run_theorem_fuzz(samples, &guidance, 99);
    let elapsed = start.elapsed();

    println!(
        "fuzzed {} count states x {} F orders in {:.2?}",
        report.samples,
        report.guidance.len(),
        elapsed
    );
    println!("evaluated (non-vacuous) states: {}", report.evaluated);
    println!(
        "fallbacks to balanced weights:  {} ({:.3}% of draws)",
        report.fallbacks,
        100.0 * report.fallback_rate
    );
    println!("\nworst-case residuals over every evaluated state:");
    println!("  weight-balance equation   {:.2e}", report.max_eq_residual);
    println!("  linearized step products  {:.2e}", report.max_linear_product);
    println!("  true unit-step products   {:.2e}", report.max_true_product);
    println!("\nviolations: {} (sum {:.2e})", report.violations, report.sum_violations);
    assert_eq!(report.violations, 0, "alignment guarantee broken");
    println!("every loss-decreasing step was F-non-decreasing.");
}
