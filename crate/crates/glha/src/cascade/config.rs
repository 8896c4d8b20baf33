use super::CascadeError;

/// Architecture and schedule knobs for the cascade.
///
/// The stage layout is `feature_layers` residual blocks followed by
/// `refinement_modules` modules of `refine_layers` blocks each; every module
/// boundary emits a logit head, so there are `refinement_modules + 1` scored
/// stages. `guidance[s]` is the F-measure exponent steering stage `s`, and
/// `eta[s]` weights stage `s`'s classification loss for every stage before
/// the final one (the final stage always has weight 1).
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeConfig {
    pub channels: usize,
    pub feature_layers: usize,
    pub refine_layers: usize,
    pub refinement_modules: usize,
    /// Per-stage F-measure targets, strictly decreasing: later stages are
    /// pushed toward precision.
    pub guidance: Vec<f64>,
    /// Weights of the non-final stage classification losses.
    pub eta: Vec<f64>,
    /// Weight of the essential-matrix regression term once it activates.
    pub eta_reg: f64,
    /// Iteration before which the regression term is held at zero.
    pub warmup_iters: usize,
    pub ca_groups: usize,
    pub ca_reduction: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub iters: usize,
    pub seed: u64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            channels: 128,
            feature_layers: 12,
            refine_layers: 3,
            refinement_modules: 2,
            guidance: vec![0.3, 0.25, 0.2],
            eta: vec![0.1, 0.1],
            eta_reg: 0.1,
            warmup_iters: 500,
            ca_groups: 8,
            ca_reduction: 4,
            lr: 1e-3,
            batch_size: 16,
            iters: 5000,
            seed: 0,
        }
    }
}

impl CascadeConfig {
    pub fn stages(&self) -> usize {
        self.refinement_modules + 1
    }

    pub fn validate(&self) -> Result<(), CascadeError> {
        let c = self.channels;
        if c == 0 {
            return Err(CascadeError::Config("channels must be >= 1".into()));
        }
        if self.feature_layers == 0 {
            return Err(CascadeError::Config("feature_layers must be >= 1".into()));
        }
        if self.refinement_modules > 0 && self.refine_layers == 0 {
            return Err(CascadeError::Config(
                "refine_layers must be >= 1 when refinement modules exist".into(),
            ));
        }
        if self.guidance.len() != self.stages() {
            return Err(CascadeError::Config(format!(
                "guidance must have one entry per stage: {} stages, {} entries",
                self.stages(),
                self.guidance.len()
            )));
        }
        if self.guidance.iter().any(|&n| !(n > 0.0) || !n.is_finite()) {
            return Err(CascadeError::Config(
                "guidance entries must be positive finite".into(),
            ));
        }
        if self.guidance.windows(2).any(|w| w[0] <= w[1]) {
            return Err(CascadeError::Config(
                "guidance must be strictly decreasing across stages".into(),
            ));
        }
        if self.eta.len() != self.refinement_modules {
            return Err(CascadeError::Config(format!(
                "eta must have one entry per non-final stage: {} needed, {} given",
                self.refinement_modules,
                self.eta.len()
            )));
        }
        if self.eta.iter().chain([&self.eta_reg]).any(|&e| e < 0.0 || !e.is_finite()) {
            return Err(CascadeError::Config(
                "loss weights must be finite and nonnegative".into(),
            ));
        }
        if c % 4 != 0 {
            return Err(CascadeError::Config(format!(
                "channels {c} must be divisible by 4 for the likelihood branch"
            )));
        }
        if self.ca_groups == 0 || self.ca_reduction == 0 {
            return Err(CascadeError::Config(
                "ca_groups and ca_reduction must be >= 1".into(),
            ));
        }
        if c % self.ca_reduction != 0 {
            return Err(CascadeError::Config(format!(
                "channels {c} not divisible by ca_reduction {}",
                self.ca_reduction
            )));
        }
        if c % self.ca_groups != 0 || (c / self.ca_reduction) % self.ca_groups != 0 {
            return Err(CascadeError::Config(format!(
                "ca_groups {} must divide both {c} and {}",
                self.ca_groups,
                c / self.ca_reduction
            )));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(CascadeError::Config("lr must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(CascadeError::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}
