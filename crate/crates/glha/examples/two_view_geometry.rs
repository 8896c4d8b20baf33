//! Recovers two-view geometry from noise-free correspondences: weighted
//! eight-point fit, projection onto the essential manifold, and pose
//! decomposition with cheirality disambiguation.
//!
//!     cargo run --example two_view_geometry

use glha::epipolar::{
    epipolar_residual, fit_eight_point, pose_error, project_to_essential, recover_pose,
    Correspondence,
};
use glha::synth::{generate_pair, pair_rng, SceneConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = SceneConfig {
        points_per_pair: 128,
        inlier_rate: 0.9,
        noise_sigma: 0.0, // inliers obey the true geometry exactly
        ..SceneConfig::default()
    };
    let mut rng = pair_rng(11, 0);
    let pair = generate_pair(&mut rng, &scene, "scene")?;

    // Fit on the exactly-consistent subset. (The label threshold admits rare
    // random points that land near the epipolar band without being exact, so
    // the residual itself is the honest filter here.)
    let clean: Vec<Correspondence> = pair
        .coords
        .iter()
        .filter(|c| epipolar_residual(&pair.e_gt, c) < 1e-12)
        .copied()
        .collect();
    let f = fit_eight_point(&clean, None)?;
    let e = project_to_essential(&f);
    let diff = (e - pair.e_gt).norm().min((e + pair.e_gt).norm());
    println!(
        "eight-point fit on {} clean correspondences",
        clean.len()
    );
    println!("essential matrix error (sign-resolved Frobenius): {diff:.2e}");

    // Pose decomposition: four candidate (R, t) pairs, picked by cheirality.
    let pose = recover_pose(&e, &clean)?;
    let err = pose_error(&pose.rotation, &pose.translation, &pair.r_gt, &pair.t_gt);
    println!(
        "pose error: rotation {:.2e} deg, translation {:.2e} deg (support {}/{})",
        err.rot_deg,
        err.trans_deg,
        pose.support,
        clean.len()
    );

    // The same fit over the full contaminated set, with per-point weights
    // zeroing the contamination: exactly how the learned classifier's
    // confidence weights are used downstream.
    let weights: Vec<f64> = pair
        .coords
        .iter()
        .map(|c| if epipolar_residual(&pair.e_gt, c) < 1e-12 { 1.0 } else { 0.0 })
        .collect();
    let f_w = fit_eight_point(&pair.coords, Some(&weights))?;
    let e_w = project_to_essential(&f_w);
    let diff_w = (e_w - pair.e_gt).norm().min((e_w + pair.e_gt).norm());
    println!(
        "\nweighted fit over all {} points ({} outliers zero-weighted): error {:.2e}",
        pair.len(),
        pair.len() - clean.len(),
        diff_w
    );
    Ok(())
}
