//! Robust essential-matrix estimation: repeated minimal eight-point fits
//! with consensus scoring, adaptive early termination, and a final refit on
//! the best consensus set. Used both as the raw baseline and as the
//! post-processing stage behind the learned classifier.

use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::epipolar::{
    epipolar_residual, fit_eight_point, project_to_essential, Correspondence,
    INLIER_RESIDUAL_THRESHOLD,
};

#[derive(Debug, thiserror::Error)]
pub enum RansacError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("need at least 8 correspondences, got {0}")]
    InsufficientPoints(usize),
    #[error("no hypothesis reached a consensus of 8 points")]
    NoConsensus,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub max_iters: usize,
    /// Same residual threshold as ground-truth labeling, so the robust
    /// baseline and the classifier share one inlier definition.
    pub threshold: f64,
    /// Confidence target for the adaptive iteration bound.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            max_iters: 2000,
            threshold: INLIER_RESIDUAL_THRESHOLD,
            confidence: 0.999,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), RansacError> {
        if !(self.threshold > 0.0) {
            return Err(RansacError::InvalidConfig(format!(
                "threshold {} must be positive",
                self.threshold
            )));
        }
        if self.max_iters == 0 {
            return Err(RansacError::InvalidConfig("max_iters must be >= 1".into()));
        }
        if !(0.0 < self.confidence && self.confidence < 1.0) {
            return Err(RansacError::InvalidConfig(format!(
                "confidence {} not in (0, 1)",
                self.confidence
            )));
        }
        Ok(())
    }
}

/// A robust fit: the refit essential matrix, its inlier mask (recomputed
/// against the returned matrix), and the search trace.
#[derive(Clone, Debug)]
pub struct RansacResult {
    pub essential: Matrix3<f64>,
    pub mask: Vec<bool>,
    pub consensus: usize,
    /// Best consensus size after each completed iteration (non-decreasing).
    pub consensus_history: Vec<usize>,
    pub iterations: usize,
}

fn count_consensus(e: &Matrix3<f64>, corrs: &[Correspondence], threshold: f64) -> Vec<bool> {
    corrs
        .iter()
        .map(|c| epipolar_residual(e, c) < threshold)
        .collect()
}

/// Adaptive iteration requirement: enough samples that an all-inlier draw
/// was seen with probability `confidence`, given inlier fraction `w`.
fn required_iterations(w: f64, confidence: f64, cap: usize) -> usize {
    let p_good = w.powi(8);
    if p_good >= 1.0 {
        return 0;
    }
    if p_good <= 0.0 {
        return cap;
    }
    // ln_1p keeps the denominator nonzero for tiny p_good, where
    // (1.0 - p_good) would round to 1.0 and spuriously zero the bound.
    let k = (1.0 - confidence).ln() / (-p_good).ln_1p();
    if !k.is_finite() {
        return cap;
    }
    (k.ceil() as usize).min(cap)
}

/// Hypothesize-and-verify essential-matrix estimation.
pub fn ransac_essential(
    corrs: &[Correspondence],
    config: &RansacConfig,
) -> Result<RansacResult, RansacError> {
    config.validate()?;
    let n = corrs.len();
    if n < 8 {
        return Err(RansacError::InsufficientPoints(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best_e: Option<Matrix3<f64>> = None;
    let mut best_mask: Vec<bool> = Vec::new();
    let mut best_consensus = 0usize;
    let mut history = Vec::new();
    let mut iterations = 0usize;
    let mut needed = config.max_iters;

    while iterations < needed {
        iterations += 1;
        let sample = rand::seq::index::sample(&mut rng, n, 8);
        let minimal: Vec<Correspondence> = sample.iter().map(|i| corrs[i]).collect();
        if let Ok(fit) = fit_eight_point(&minimal, None) {
            let e = project_to_essential(&fit);
            let mask = count_consensus(&e, corrs, config.threshold);
            let consensus = mask.iter().filter(|&&m| m).count();
            if consensus > best_consensus {
                best_consensus = consensus;
                best_mask = mask;
                best_e = Some(e);
                needed = required_iterations(
                    consensus as f64 / n as f64,
                    config.confidence,
                    config.max_iters,
                )
                .max(iterations);
            }
        }
        history.push(best_consensus);
    }

    let (e, mask) = match best_e {
        Some(e) if best_consensus >= 8 => (e, best_mask),
        _ => return Err(RansacError::NoConsensus),
    };

    // Refit on the consensus set with uniform weights and keep it only if
    // it holds at least the consensus it was fit on: with exact inliers, a
    // couple of accidental consensus points can otherwise swing the
    // badly-conditioned full least squares away from the minimal fit. The
    // returned mask is always recomputed against the returned matrix.
    let consensus_set: Vec<Correspondence> = corrs
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|(&c, _)| c)
        .collect();
    let (final_e, final_mask, consensus) = match fit_eight_point(&consensus_set, None) {
        Ok(refit) => {
            let re = project_to_essential(&refit);
            let rmask = count_consensus(&re, corrs, config.threshold);
            let rcons = rmask.iter().filter(|&&m| m).count();
            if rcons >= best_consensus {
                (re, rmask, rcons)
            } else {
                (e, mask, best_consensus)
            }
        }
        Err(_) => (e, mask, best_consensus),
    };
    Ok(RansacResult {
        essential: final_e,
        mask: final_mask,
        consensus,
        consensus_history: history,
        iterations,
    })
}
