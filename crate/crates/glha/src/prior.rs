//! Bayesian ratio prior: empirical densities of a match-quality ratio for
//! inliers and outliers, per-pair mixture estimation of the inlier fraction,
//! and the posterior inlier probability used as a side channel by the
//! attention blocks.
//!
//! Both class-conditional densities are histograms over `[0, 1]` fitted on
//! labeled training data. A new pair's ratios are fitted as the mixture
//! `alpha * f_in + (1 - alpha) * f_out` by closed-form least squares, and
//! each ratio `r` then carries the posterior
//! `f_in(r) alpha / (f_in(r) alpha + f_out(r) (1 - alpha))`.

use std::path::Path;

use serde::{Deserialize, Serialize};

/// Default number of uniform histogram bins over `[0, 1]`.
pub const DEFAULT_BINS: usize = 20;

/// Laplace smoothing mass added to every bin before normalization; keeps
/// every density strictly positive so the posterior is always well-defined.
pub const SMOOTHING: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum PriorError {
    #[error("no {0} ratio samples to fit")]
    EmptyCorpus(&'static str),
    #[error("ratio {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("bin count must be at least 1")]
    NoBins,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed prior file: {0}")]
    Format(#[from] serde_json::Error),
}

/// Piecewise-constant probability density over `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioPdf {
    /// `bins + 1` uniform edges partitioning `[0, 1]`.
    pub bin_edges: Vec<f64>,
    /// One nonnegative density value per bin; integrates to 1.
    pub densities: Vec<f64>,
}

impl RatioPdf {
    /// Fits a smoothed histogram density to samples in `[0, 1]`.
    pub fn fit(samples: &[f64], bins: usize) -> Result<Self, PriorError> {
        if bins == 0 {
            return Err(PriorError::NoBins);
        }
        if samples.is_empty() {
            return Err(PriorError::EmptyCorpus("any"));
        }
        let mut counts = vec![0usize; bins];
        for &r in samples {
            counts[bin_index(r, bins)?] += 1;
        }
        let width = 1.0 / bins as f64;
        let total: f64 = samples.len() as f64 + SMOOTHING * bins as f64;
        let densities = counts
            .iter()
            .map(|&c| (c as f64 + SMOOTHING) / (total * width))
            .collect();
        Ok(RatioPdf {
            bin_edges: (0..=bins).map(|k| k as f64 * width).collect(),
            densities,
        })
    }

    pub fn bins(&self) -> usize {
        self.densities.len()
    }

    /// Density at `r` by bin lookup; bins are half-open `[e_k, e_{k+1})`
    /// with `r = 1` assigned to the last bin.
    pub fn density(&self, r: f64) -> Result<f64, PriorError> {
        Ok(self.densities[bin_index(r, self.bins())?])
    }

    /// `sum(density * width)`, which should be 1 up to roundoff.
    pub fn integral(&self) -> f64 {
        let width = 1.0 / self.bins() as f64;
        self.densities.iter().sum::<f64>() * width
    }

    /// Cumulative distribution at the bin edges (length `bins + 1`).
    pub fn cdf_at_edges(&self) -> Vec<f64> {
        let width = 1.0 / self.bins() as f64;
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.bins() + 1);
        out.push(0.0);
        for &d in &self.densities {
            acc += d * width;
            out.push(acc);
        }
        out
    }
}

fn bin_index(r: f64, bins: usize) -> Result<usize, PriorError> {
    if !(0.0..=1.0).contains(&r) {
        return Err(PriorError::OutOfRange(r));
    }
    Ok(((r * bins as f64) as usize).min(bins - 1))
}

/// Result of the per-pair mixture fit.
#[derive(Clone, Copy, Debug)]
pub struct RatioEstimate {
    pub alpha: f64,
    /// True when the two class densities coincide and no fit is possible;
    /// `alpha` is then 0.5 by convention.
    pub degenerate: bool,
}

/// The fitted class-conditional ratio densities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorModel {
    pub f_in: RatioPdf,
    pub f_out: RatioPdf,
}

impl PriorModel {
    /// Fits both densities on labeled ratio corpora over the same bins.
    pub fn fit(
        inlier_ratios: &[f64],
        outlier_ratios: &[f64],
        bins: usize,
    ) -> Result<Self, PriorError> {
        if inlier_ratios.is_empty() {
            return Err(PriorError::EmptyCorpus("inlier"));
        }
        if outlier_ratios.is_empty() {
            return Err(PriorError::EmptyCorpus("outlier"));
        }
        Ok(PriorModel {
            f_in: RatioPdf::fit(inlier_ratios, bins)?,
            f_out: RatioPdf::fit(outlier_ratios, bins)?,
        })
    }

    /// Least-squares fit of the pair's ratio histogram `h` as the mixture
    /// `alpha f_in + (1 - alpha) f_out`, clamped to `[0, 1]`:
    /// `alpha = <h - f_out, f_in - f_out> / ||f_in - f_out||^2`.
    pub fn estimate_inlier_ratio(&self, ratios: &[f64]) -> Result<RatioEstimate, PriorError> {
        if ratios.is_empty() {
            return Err(PriorError::EmptyCorpus("pair"));
        }
        // The pair histogram uses the same smoothing and normalization as
        // the model densities, so a pair distributed exactly like one class
        // lands exactly on that endpoint of the mixture segment.
        let h = RatioPdf::fit(ratios, self.f_in.bins())?;
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..self.f_in.bins() {
            let v = self.f_in.densities[k] - self.f_out.densities[k];
            num += (h.densities[k] - self.f_out.densities[k]) * v;
            den += v * v;
        }
        if den == 0.0 {
            return Ok(RatioEstimate {
                alpha: 0.5,
                degenerate: true,
            });
        }
        Ok(RatioEstimate {
            alpha: (num / den).clamp(0.0, 1.0),
            degenerate: false,
        })
    }

    /// Posterior probability that a ratio `r` belongs to an inlier, given
    /// the pair's inlier fraction `alpha`.
    pub fn posterior(&self, r: f64, alpha: f64) -> Result<f64, PriorError> {
        Ok(posterior_from_densities(
            self.f_in.density(r)?,
            self.f_out.density(r)?,
            alpha,
        ))
    }

    /// Estimates `alpha` for the pair, then maps every ratio to its
    /// posterior inlier probability.
    pub fn pair_posteriors(&self, ratios: &[f64]) -> Result<(Vec<f64>, RatioEstimate), PriorError> {
        let est = self.estimate_inlier_ratio(ratios)?;
        let mut out = Vec::with_capacity(ratios.len());
        for &r in ratios {
            out.push(self.posterior(r, est.alpha)?);
        }
        Ok((out, est))
    }

    pub fn save(&self, path: &Path) -> Result<(), PriorError> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PriorError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Two-component Bayes rule on already-looked-up density values.
pub fn posterior_from_densities(f_in: f64, f_out: f64, alpha: f64) -> f64 {
    let alpha = alpha.clamp(0.0, 1.0);
    let num = f_in * alpha;
    let den = num + f_out * (1.0 - alpha);
    if den == 0.0 {
        // Unreachable with smoothed densities; defined for completeness.
        return 0.5;
    }
    num / den
}
