//! Two-view correspondence pruning with a guided classification loss.
//!
//! The crate trains a permutation-equivariant classifier that separates
//! inlier from outlier correspondences between two calibrated views, and
//! recovers relative pose from the surviving matches. The pieces:
//!
//! - [`autodiff`]: a minimal reverse-mode engine over dense `f64` tensors
//!   with exactly the operations the model needs, including a differentiable
//!   smallest-eigenvector solve.
//! - [`epipolar`]: essential-matrix construction, residuals, the weighted
//!   eight-point solve, pose decomposition, and angular error metrics.
//! - [`guided`]: the guided cross-entropy loss whose class weights are
//!   re-derived every batch so that loss descent provably cannot decrease
//!   the targeted F-measure.
//! - [`prior`]: a Bayesian per-correspondence inlier prior built from
//!   descriptor ratio histograms.
//! - [`cascade`]: the hybrid-attention cascade network, its trainer and
//!   evaluator.
//! - [`synth`]: seeded synthetic two-view scene and dataset generation.
//! - [`ransac`]: a deterministic RANSAC baseline over the eight-point solve.
//! - [`cli`]: the `glha` command-line front end.

pub mod autodiff;
pub mod cascade;
pub mod cli;
pub mod epipolar;
pub mod guided;
pub mod prior;
pub mod ransac;
pub mod synth;
