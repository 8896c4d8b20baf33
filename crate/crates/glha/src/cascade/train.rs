use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{pair_total_loss, CascadeError, CascadeModel};
use crate::autodiff::{Adam, Mode, Tape, Tensor};
use crate::guided::{f_measure_from_counts, LossKind};
use crate::prior::PriorModel;
use crate::synth::CorrespondencePair;

/// Momentum for folding batch statistics into running batch-norm buffers.
const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug)]
pub struct TrainOptions {
    pub loss: LossKind,
    /// Cadence (in iterations) of curve records and validation sweeps.
    pub eval_every: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            loss: LossKind::Guided,
            eval_every: 100,
        }
    }
}

/// One row of the training curves.
#[derive(Clone, Debug, serde::Serialize)]
pub struct CurvePoint {
    /// 1-based iteration this row was recorded after.
    pub iter: usize,
    pub loss_total: f64,
    /// Batch-mean classification loss per stage, final stage last.
    pub loss_stages: Vec<f64>,
    /// Batch-mean regression distance; NaN when no pair computed one.
    pub loss_reg: f64,
    /// Batch-mean positive-class weight per stage: dynamic under the guided
    /// loss, pinned at 0.5 in instance-balanced mode, NaN for the plain mean.
    pub lambda_stages: Vec<f64>,
    /// Pairs skipped in this batch because only one class was present.
    pub skipped_pairs: usize,
    pub val_precision: f64,
    pub val_recall: f64,
    /// Validation F_n per stage at each stage's own guidance exponent.
    pub val_stage_f: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub curves: Vec<CurvePoint>,
    pub iterations: usize,
    pub skipped_pairs_total: usize,
}

fn posteriors_for(
    prior: &PriorModel,
    pairs: &[CorrespondencePair],
) -> Result<Vec<Vec<f64>>, CascadeError> {
    pairs
        .iter()
        .map(|p| Ok(prior.pair_posteriors(&p.ratios)?.0))
        .collect()
}

fn has_both_classes(labels: &[bool]) -> bool {
    labels.iter().any(|&l| l) && labels.iter().any(|&l| !l)
}

struct ValMetrics {
    precision: f64,
    recall: f64,
    stage_f: Vec<f64>,
}

fn validate(
    model: &CascadeModel,
    pairs: &[CorrespondencePair],
    priors: &[Vec<f64>],
) -> Result<ValMetrics, CascadeError> {
    let stages = model.config.stages();
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    let mut f_sums = vec![0.0; stages];
    for (pair, prior) in pairs.iter().zip(priors) {
        let mut tape = Tape::new(Mode::Eval);
        let pass = model.forward_on_tape(&mut tape, &pair.coords, prior, false)?;
        let n_pos = pair.labels.iter().filter(|&&l| l).count();
        for (s, logits) in pass.outputs.stage_logits.iter().enumerate() {
            let (mut tp, mut fp) = (0usize, 0usize);
            for (&logit, &label) in logits.iter().zip(&pair.labels) {
                if logit > 0.0 {
                    if label {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            let fn_count = n_pos - tp;
            f_sums[s] += f_measure_from_counts(n_pos, fn_count, fp, model.config.guidance[s]);
            if s == stages - 1 {
                let denom = tp + fp;
                p_sum += if denom == 0 { 0.0 } else { tp as f64 / denom as f64 };
                r_sum += if n_pos == 0 { 0.0 } else { tp as f64 / n_pos as f64 };
            }
        }
    }
    let count = pairs.len().max(1) as f64;
    Ok(ValMetrics {
        precision: p_sum / count,
        recall: r_sum / count,
        stage_f: f_sums.into_iter().map(|f| f / count).collect(),
    })
}

/// Runs the optimization loop: seeded epoch shuffling, fixed-size batches,
/// per-pair tapes whose gradients are averaged over the scorable pairs of
/// the batch, one Adam step per iteration, and running batch-norm updates
/// folded in pair order. Single-threaded and fully determined by the
/// config seed.
pub fn train_cascade(
    model: &mut CascadeModel,
    prior: &PriorModel,
    train_pairs: &[CorrespondencePair],
    val_pairs: &[CorrespondencePair],
    opts: &TrainOptions,
) -> Result<TrainReport, CascadeError> {
    let cfg = model.config.clone();
    if opts.eval_every == 0 {
        return Err(CascadeError::Config("eval_every must be >= 1".into()));
    }
    let mut report = TrainReport::default();
    if cfg.iters == 0 {
        return Ok(report);
    }
    if train_pairs.is_empty() {
        return Err(CascadeError::Input("no training pairs".into()));
    }

    let train_priors = posteriors_for(prior, train_pairs)?;
    let val_priors = posteriors_for(prior, val_pairs)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;
    let stages = cfg.stages();

    for iter0 in 0..cfg.iters {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }

        let valid = batch
            .iter()
            .filter(|&&k| has_both_classes(&train_pairs[k].labels))
            .count();
        let skipped = batch.len() - valid;
        report.skipped_pairs_total += skipped;
        let regression_active = iter0 >= cfg.warmup_iters && cfg.eta_reg > 0.0;

        let mut grad_sums: HashMap<String, Tensor> = HashMap::new();
        let mut total_sum = 0.0;
        let mut stage_sums = vec![0.0; stages];
        let mut lambda_sums = vec![0.0; stages];
        let mut reg_sum = 0.0;
        let mut reg_count = 0usize;

        for &k in &batch {
            let pair = &train_pairs[k];
            if !has_both_classes(&pair.labels) {
                continue;
            }
            let mut tape = Tape::new(Mode::Train);
            let pass =
                model.forward_on_tape(&mut tape, &pair.coords, &train_priors[k], regression_active)?;
            let breakdown = pair_total_loss(
                &mut tape,
                &pass,
                &pair.labels,
                &pair.e_gt,
                opts.loss,
                &cfg,
                regression_active,
            )?;
            if !breakdown.total_value.is_finite() {
                return Err(CascadeError::NonFiniteLoss(format!(
                    "iteration {}, pair '{}': total {}, stages {:?}, regression {:?}",
                    iter0 + 1,
                    pair.pair_id,
                    breakdown.total_value,
                    breakdown.stage_values,
                    breakdown.reg_value
                )));
            }
            tape.backward(breakdown.total, 1.0 / valid as f64)?;
            for (name, &node) in &pass.binding {
                if let Some(g) = tape.grad(node) {
                    match grad_sums.get_mut(name) {
                        Some(acc) => {
                            for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                                *a += v;
                            }
                        }
                        None => {
                            grad_sums.insert(name.clone(), g.clone());
                        }
                    }
                }
            }
            model.apply_bn_updates(&pass.bn_updates, BN_MOMENTUM);

            total_sum += breakdown.total_value;
            for (s, &v) in breakdown.stage_values.iter().enumerate() {
                stage_sums[s] += v;
                lambda_sums[s] += match (opts.loss, &breakdown.stage_weights[s]) {
                    (LossKind::Guided, Some(gw)) => gw.lambda,
                    (LossKind::InstanceBalanced, _) => 0.5,
                    _ => f64::NAN,
                };
            }
            if let Some(r) = breakdown.reg_value {
                reg_sum += r;
                reg_count += 1;
            }
        }

        if valid > 0 {
            adam.step(&mut model.params, &grad_sums)?;
        }

        let iter = iter0 + 1;
        if iter % opts.eval_every == 0 || iter == cfg.iters {
            let val = if val_pairs.is_empty() {
                ValMetrics {
                    precision: f64::NAN,
                    recall: f64::NAN,
                    stage_f: vec![f64::NAN; stages],
                }
            } else {
                validate(model, val_pairs, &val_priors)?
            };
            let denom = valid.max(1) as f64;
            report.curves.push(CurvePoint {
                iter,
                loss_total: if valid > 0 { total_sum / denom } else { f64::NAN },
                loss_stages: stage_sums.iter().map(|v| v / denom).collect(),
                loss_reg: if reg_count > 0 {
                    reg_sum / reg_count as f64
                } else {
                    f64::NAN
                },
                lambda_stages: lambda_sums.iter().map(|v| v / denom).collect(),
                skipped_pairs: skipped,
                val_precision: val.precision,
                val_recall: val.recall,
                val_stage_f: val.stage_f,
            });
        }
        report.iterations = iter;
    }
    Ok(report)
}
