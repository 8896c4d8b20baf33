//! Runs the RANSAC estimator across increasing outlier contamination and
//! reports pose accuracy and classification quality of the consensus mask.
//!
//!     cargo run --example ransac_benchmark

use glha::epipolar::{pose_error, recover_pose};
use glha::ransac::{ransac_essential, RansacConfig};
use glha::synth::{generate_pair, pair_rng, SceneConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("outlier%   rot err (deg)   mask precision   mask recall   iterations");
    for (k, &outlier_rate) in [0.1, 0.3, 0.5, 0.7].iter().enumerate() {
        let scene = SceneConfig {
            points_per_pair: 256,
            inlier_rate: 1.0 - outlier_rate,
            noise_sigma: 1e-4,
            ..SceneConfig::default()
        };
        let mut rng = pair_rng(23, k as u64);
        let pair = generate_pair(&mut rng, &scene, "bench")?;

        let config = RansacConfig {
            seed: 1,
            ..RansacConfig::default()
        };
        let result = ransac_essential(&pair.coords, &config)?;

        let pose = recover_pose(&result.essential, &pair.coords)?;
        let err = pose_error(&pose.rotation, &pose.translation, &pair.r_gt, &pair.t_gt);

        let (mut tp, mut fp, mut fn_) = (0u32, 0u32, 0u32);
        for (&m, &l) in result.mask.iter().zip(&pair.labels) {
            match (m, l) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / (tp + fn_) as f64;
        println!(
            "{:>7.0}%   {:>13.4}   {:>14.3}   {:>11.3}   {:>10}",
            100.0 * outlier_rate,
            err.rot_deg,
            precision,
            recall,
            result.iterations
        );
    }
    println!("\n(adaptive iteration count grows with contamination; the consensus");
    println!(" mask stays near-perfect because clean inliers dominate each fit)");
    Ok(())
}
