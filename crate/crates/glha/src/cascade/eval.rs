use super::{CascadeError, CascadeModel};
use crate::autodiff::{Mode, Tape};
use crate::epipolar::{
    fit_eight_point, map_at, pose_error, project_to_essential, recover_pose, Correspondence,
};
use crate::guided::f_measure_from_pr;
use crate::prior::PriorModel;
use crate::ransac::{ransac_essential, RansacConfig};
use crate::synth::CorrespondencePair;

/// Angular error charged when too few points survive for pose recovery or
/// the estimator fails outright.
pub const POSE_FAILURE_DEG: f64 = 180.0;

/// How predicted inliers are turned into a relative pose.
#[derive(Clone, Debug)]
pub enum PostProcess {
    /// One weighted least-squares fit over all points using the pose weights.
    WeightedEightPoint,
    /// Robust re-estimation on the predicted-inlier subset. Each pair k runs
    /// with seed `config.seed + k` so pairs are decorrelated but the whole
    /// sweep stays deterministic.
    Ransac(RansacConfig),
}

/// What a scorer produces for one pair: logits for every refinement stage
/// (final stage last), pose weights, and the per-module context fallback
/// flags. Single-stage scorers simply return one logit vector and no flags.
#[derive(Clone, Debug)]
pub struct ScoredPair {
    pub stage_logits: Vec<Vec<f64>>,
    pub pose_weights: Vec<f64>,
    pub context_fallback: Vec<bool>,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct PairMetrics {
    pub pair_id: String,
    /// Classification precision/recall of each stage's logits.
    pub stage_precision: Vec<f64>,
    pub stage_recall: Vec<f64>,
    /// Final-stage precision and recall (duplicated from the last stage
    /// entries so consumers never have to index).
    pub precision: f64,
    pub recall: f64,
    pub f_half: f64,
    pub f_one: f64,
    pub f_two: f64,
    /// F at the final stage's guidance exponent.
    pub f_guided: f64,
    pub predicted_inliers: usize,
    pub rot_deg: f64,
    pub trans_deg: f64,
    pub pose_failed: bool,
    /// Per refinement module: carried-over context weights were all zero
    /// and uniform ones were substituted.
    pub context_fallback: Vec<bool>,
}

/// Mean classification scores of one refinement stage over the pair pool.
#[derive(Clone, Debug, serde::Serialize)]
pub struct StageStats {
    pub precision: f64,
    pub recall: f64,
    /// F at this stage's guidance exponent.
    pub f_measure: f64,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct EvalReport {
    /// Means of the per-pair scores (not aggregate counts over the pool).
    pub precision: f64,
    pub recall: f64,
    pub f_half: f64,
    pub f_one: f64,
    pub f_two: f64,
    pub f_guided: f64,
    pub map5: f64,
    pub map10: f64,
    /// One entry per stage, final stage last.
    pub per_stage: Vec<StageStats>,
    /// Fraction of pairs that hit the uniform-context fallback, per module.
    pub fallback_rate: Vec<f64>,
    /// Guidance exponent per stage (the F-measure conventions used above).
    pub guidance: Vec<f64>,
    pub per_pair: Vec<PairMetrics>,
}

fn precision_recall(logits: &[f64], labels: &[bool]) -> (f64, f64, usize) {
    let (mut tp, mut fp) = (0usize, 0usize);
    for (&logit, &label) in logits.iter().zip(labels) {
        if logit > 0.0 {
            if label {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if n_pos == 0 { 0.0 } else { tp as f64 / n_pos as f64 };
    (precision, recall, tp + fp)
}

fn pose_for_pair(
    pair: &CorrespondencePair,
    predicted: &[bool],
    weights: &[f64],
    post: &PostProcess,
    pair_index: usize,
) -> (f64, f64, bool) {
    let n_pred = predicted.iter().filter(|&&p| p).count();
    if n_pred < 8 {
        return (POSE_FAILURE_DEG, POSE_FAILURE_DEG, true);
    }
    let estimate = match post {
        PostProcess::WeightedEightPoint => fit_eight_point(&pair.coords, Some(weights))
            .map(|m| project_to_essential(&m))
            .and_then(|e| recover_pose(&e, &pair.coords)),
        PostProcess::Ransac(base) => {
            let subset: Vec<Correspondence> = pair
                .coords
                .iter()
                .zip(predicted)
                .filter(|(_, &p)| p)
                .map(|(c, _)| *c)
                .collect();
            let config = RansacConfig {
                seed: base.seed.wrapping_add(pair_index as u64),
                ..*base
            };
            match ransac_essential(&subset, &config) {
                Ok(res) => recover_pose(&res.essential, &subset),
                Err(_) => return (POSE_FAILURE_DEG, POSE_FAILURE_DEG, true),
            }
        }
    };
    match estimate {
        Ok(est) => {
            let err = pose_error(&est.rotation, &est.translation, &pair.r_gt, &pair.t_gt);
            (err.rot_deg, err.trans_deg, false)
        }
        Err(_) => (POSE_FAILURE_DEG, POSE_FAILURE_DEG, true),
    }
}

fn mean<T, F: Fn(&T) -> f64>(items: &[T], f: F) -> f64 {
    items.iter().map(|t| f(t)).sum::<f64>() / items.len() as f64
}

/// Scores any per-pair logit producer. `scorer` maps a pair and its prior to
/// staged logits plus pose weights; this keeps the metric path reusable for
/// oracle and baseline scorers, not just the trained model. `guidance` gives
/// the F exponent per stage and its last entry scores `f_guided`.
pub fn evaluate_with<F>(
    pairs: &[CorrespondencePair],
    priors: &[Vec<f64>],
    mut scorer: F,
    post: &PostProcess,
    guidance: &[f64],
) -> Result<EvalReport, CascadeError>
where
    F: FnMut(&CorrespondencePair, &[f64]) -> Result<ScoredPair, CascadeError>,
{
    if pairs.is_empty() {
        return Err(CascadeError::Input("no evaluation pairs".into()));
    }
    if priors.len() != pairs.len() {
        return Err(CascadeError::Input(format!(
            "got {} prior vectors for {} pairs",
            priors.len(),
            pairs.len()
        )));
    }
    if guidance.is_empty() {
        return Err(CascadeError::Config("empty guidance schedule".into()));
    }
    let stages = guidance.len();
    let guidance_n = guidance[stages - 1];
    let mut per_pair = Vec::with_capacity(pairs.len());
    let mut errors = Vec::with_capacity(pairs.len());
    for (k, (pair, prior)) in pairs.iter().zip(priors).enumerate() {
        let scored = scorer(pair, prior)?;
        if scored.stage_logits.len() != stages {
            return Err(CascadeError::Input(format!(
                "scorer returned {} stages, guidance has {}",
                scored.stage_logits.len(),
                stages
            )));
        }
        if scored.pose_weights.len() != pair.len()
            || scored.stage_logits.iter().any(|l| l.len() != pair.len())
        {
            return Err(CascadeError::Input(format!(
                "scorer output does not cover all {} points",
                pair.len()
            )));
        }
        let mut stage_precision = Vec::with_capacity(stages);
        let mut stage_recall = Vec::with_capacity(stages);
        for logits in &scored.stage_logits {
            let (p, r, _) = precision_recall(logits, &pair.labels);
            stage_precision.push(p);
            stage_recall.push(r);
        }
        let final_logits = &scored.stage_logits[stages - 1];
        let (precision, recall, predicted_inliers) = precision_recall(final_logits, &pair.labels);
        let predicted: Vec<bool> = final_logits.iter().map(|&l| l > 0.0).collect();
        let (rot_deg, trans_deg, pose_failed) =
            pose_for_pair(pair, &predicted, &scored.pose_weights, post, k);
        errors.push(rot_deg.max(trans_deg));
        per_pair.push(PairMetrics {
            pair_id: pair.pair_id.clone(),
            stage_precision,
            stage_recall,
            precision,
            recall,
            f_half: f_measure_from_pr(precision, recall, 0.5),
            f_one: f_measure_from_pr(precision, recall, 1.0),
            f_two: f_measure_from_pr(precision, recall, 2.0),
            f_guided: f_measure_from_pr(precision, recall, guidance_n),
            predicted_inliers,
            rot_deg,
            trans_deg,
            pose_failed,
            context_fallback: scored.context_fallback,
        });
    }
    let modules = per_pair[0].context_fallback.len();
    let per_stage = (0..stages)
        .map(|s| StageStats {
            precision: mean(&per_pair, |m: &PairMetrics| m.stage_precision[s]),
            recall: mean(&per_pair, |m| m.stage_recall[s]),
            f_measure: mean(&per_pair, |m| {
                f_measure_from_pr(m.stage_precision[s], m.stage_recall[s], guidance[s])
            }),
        })
        .collect();
    let fallback_rate = (0..modules)
        .map(|j| mean(&per_pair, |m: &PairMetrics| m.context_fallback[j] as u8 as f64))
        .collect();
    Ok(EvalReport {
        precision: mean(&per_pair, |m: &PairMetrics| m.precision),
        recall: mean(&per_pair, |m| m.recall),
        f_half: mean(&per_pair, |m| m.f_half),
        f_one: mean(&per_pair, |m| m.f_one),
        f_two: mean(&per_pair, |m| m.f_two),
        f_guided: mean(&per_pair, |m| m.f_guided),
        map5: map_at(&errors, 5),
        map10: map_at(&errors, 10),
        per_stage,
        fallback_rate,
        guidance: guidance.to_vec(),
        per_pair,
    })
}

/// Wraps plain final-stage logits as a one-stage scorer output.
pub fn single_stage(logits: Vec<f64>, pose_weights: Vec<f64>) -> ScoredPair {
    ScoredPair {
        stage_logits: vec![logits],
        pose_weights,
        context_fallback: Vec::new(),
    }
}

/// Scores a trained model in inference mode over a pool of pairs.
pub fn evaluate_cascade(
    model: &CascadeModel,
    prior: &PriorModel,
    pairs: &[CorrespondencePair],
    post: &PostProcess,
) -> Result<EvalReport, CascadeError> {
    let priors: Result<Vec<Vec<f64>>, CascadeError> = pairs
        .iter()
        .map(|p| Ok(prior.pair_posteriors(&p.ratios)?.0))
        .collect();
    evaluate_with(
        pairs,
        &priors?,
        |pair, prior_vals| {
            let mut tape = Tape::new(Mode::Eval);
            let pass = model.forward_on_tape(&mut tape, &pair.coords, prior_vals, false)?;
            Ok(ScoredPair {
                stage_logits: pass.outputs.stage_logits,
                pose_weights: pass.outputs.w_final,
                context_fallback: pass.outputs.uniform_context_fallback,
            })
        },
        post,
        &model.config.guidance,
    )
}
