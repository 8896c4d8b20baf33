use nalgebra::Matrix3;

use super::{CascadeConfig, CascadeError, ForwardPass};
use crate::autodiff::{NodeId, Tape};
use crate::epipolar::regression_loss_on_tape;
use crate::guided::{
    classification_loss_on_tape, guided_pair_loss_on_tape, ClassWeighting, GuidedWeights,
    LossKind,
};

/// The assembled training objective for one pair, with the per-term values
/// kept for curves and diagnostics.
pub struct PairLossBreakdown {
    pub total: NodeId,
    pub total_value: f64,
    /// One classification loss value per stage, final stage last.
    pub stage_values: Vec<f64>,
    /// Dynamic class weights per stage; populated in guided mode only.
    pub stage_weights: Vec<Option<GuidedWeights>>,
    /// Regression distance when it was computed this step.
    pub reg_value: Option<f64>,
}

/// Combines the per-stage classification losses and the optional pose
/// regression term: the final stage enters with weight 1, earlier stage `s`
/// with weight `eta[s]`, and the regression term with `eta_reg` once
/// `regression_active` is set (the warmup gate is the caller's call, since
/// it owns the iteration counter). Pairs with a single class cannot be
/// scored and are reported as such so the batch loop can skip them.
pub fn pair_total_loss(
    tape: &mut Tape,
    pass: &ForwardPass,
    labels: &[bool],
    e_gt: &Matrix3<f64>,
    kind: LossKind,
    config: &CascadeConfig,
    regression_active: bool,
) -> Result<PairLossBreakdown, CascadeError> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(CascadeError::SingleClassPair);
    }
    let stages = pass.nodes.stage_logits.len();
    if stages != config.stages() {
        return Err(CascadeError::Input(format!(
            "forward produced {stages} stages, config expects {}",
            config.stages()
        )));
    }

    let mut stage_losses = Vec::with_capacity(stages);
    let mut stage_weights = Vec::with_capacity(stages);
    for (s, &logits) in pass.nodes.stage_logits.iter().enumerate() {
        let (node, weights) = match kind {
            LossKind::Guided => {
                let (node, gw) =
                    guided_pair_loss_on_tape(tape, logits, labels, config.guidance[s])?;
                (node, Some(gw))
            }
            LossKind::InstanceBalanced => (
                classification_loss_on_tape(
                    tape,
                    logits,
                    labels,
                    ClassWeighting::PerClass {
                        lambda: 0.5,
                        mu: 0.5,
                    },
                )?,
                None,
            ),
            LossKind::CrossEntropy => (
                classification_loss_on_tape(tape, logits, labels, ClassWeighting::PlainMean)?,
                None,
            ),
        };
        stage_losses.push(node);
        stage_weights.push(weights);
    }

    // Final stage first (unit weight), then the weighted earlier stages.
    let mut total = *stage_losses.last().expect("at least one stage");
    for s in 0..stages - 1 {
        if config.eta[s] != 0.0 {
            let scaled = tape.scale_shift(stage_losses[s], config.eta[s], 0.0);
            total = tape.add(total, scaled)?;
        }
    }

    let mut reg_value = None;
    if regression_active {
        if let Some(e_hat) = pass.nodes.e_hat {
            let reg = regression_loss_on_tape(tape, e_hat, e_gt)?;
            reg_value = Some(tape.value(reg).item());
            if config.eta_reg != 0.0 {
                let scaled = tape.scale_shift(reg, config.eta_reg, 0.0);
                total = tape.add(total, scaled)?;
            }
        }
    }

    Ok(PairLossBreakdown {
        total,
        total_value: tape.value(total).item(),
        stage_values: stage_losses
            .iter()
            .map(|&id| tape.value(id).item())
            .collect(),
        stage_weights,
        reg_value,
    })
}
