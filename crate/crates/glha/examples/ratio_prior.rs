//! Fits the match-ratio prior on labeled data, then uses it on an unlabeled
//! pair: estimate the inlier fraction and turn raw ratios into posteriors.
//!
//!     cargo run --example ratio_prior

use glha::prior::{PriorModel, DEFAULT_BINS};
use glha::synth::{generate_pair, pair_rng, SceneConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = SceneConfig {
        points_per_pair: 512,
        inlier_rate: 0.35,
        ..SceneConfig::default()
    };

    // Pool labeled ratios from a handful of training pairs.
    let mut inlier_ratios = Vec::new();
    let mut outlier_ratios = Vec::new();
    for i in 0..20 {
        let mut rng = pair_rng(7, i);
        let pair = generate_pair(&mut rng, &scene, &format!("train-{i}"))?;
        for (&r, &l) in pair.ratios.iter().zip(&pair.labels) {
            if l {
                inlier_ratios.push(r);
            } else {
                outlier_ratios.push(r);
            }
        }
    }
    let model = PriorModel::fit(&inlier_ratios, &outlier_ratios, DEFAULT_BINS)?;
    println!(
        "fitted histogram densities on {} inlier / {} outlier ratios ({} bins)",
        inlier_ratios.len(),
        outlier_ratios.len(),
        DEFAULT_BINS
    );

    // Apply to a fresh pair as if unlabeled.
    let mut rng = pair_rng(7, 1000);
    let pair = generate_pair(&mut rng, &scene, "query")?;
    let (posteriors, estimate) = model.pair_posteriors(&pair.ratios)?;
    let truth = pair.inlier_count() as f64 / pair.len() as f64;
    println!(
        "\nestimated inlier fraction alpha = {:.4} (true {:.4}, degenerate: {})",
        estimate.alpha, truth, estimate.degenerate
    );

    // Posteriors should separate the classes without seeing any labels.
    let (mut pos_sum, mut pos_n, mut neg_sum, mut neg_n) = (0.0, 0u32, 0.0, 0u32);
    for (&p, &l) in posteriors.iter().zip(&pair.labels) {
        if l {
            pos_sum += p;
            pos_n += 1;
        } else {
            neg_sum += p;
            neg_n += 1;
        }
    }
    println!(
        "mean posterior on true inliers {:.3}, on true outliers {:.3}",
        pos_sum / pos_n as f64,
        neg_sum / neg_n as f64
    );

    // The model round-trips through JSON for reuse across runs.
    let path = std::env::temp_dir().join("glha_example_prior.json");
    model.save(&path)?;
    let reloaded = PriorModel::load(&path)?;
    let (p2, _) = reloaded.pair_posteriors(&pair.ratios)?;
    println!("\nsave/load round-trip preserves outputs: {}", posteriors == p2);
    Ok(())
}
