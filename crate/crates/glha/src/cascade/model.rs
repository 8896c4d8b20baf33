use std::collections::HashMap;

use nalgebra::Matrix3;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CascadeConfig, CascadeError};
use crate::autodiff::{Mode, NodeId, ParameterStore, Tape, Tensor};
use crate::epipolar::{
    design_matrix, eight_point_on_tape, essential_from_vec9, Correspondence, EIGENGAP_TOLERANCE,
};

/// How fresh parameters are filled.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Every map weight and bias zero (normalization scales stay 1). Makes
    /// each residual block the identity; used by structural tests.
    Zeros,
    /// Uniform fan-balanced weights, zero biases.
    Seeded(u64),
}

/// Weight-learning branch of one normalization unit: a likelihood stack over
/// the features, fused with the per-point prior, squashed to one score per
/// point and softmax-normalized over the point axis.
pub struct BacnParams {
    pub l1w: NodeId,
    pub l1b: NodeId,
    pub l2w: NodeId,
    pub l2b: NodeId,
    pub f1w: NodeId,
    pub f1b: NodeId,
    pub f2w: NodeId,
    pub f2b: NodeId,
}

/// Channel gate: grouped bottleneck maps ending in a sigmoid.
pub struct CaParams {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
    pub groups: usize,
}

/// One half of a residual block: context normalization (weights either
/// learned here or supplied by the caller), batch normalization, relu, a
/// per-point channel map, and the channel gate.
pub struct SubUnitParams {
    pub bacn: Option<BacnParams>,
    pub bn_gamma: NodeId,
    pub bn_beta: NodeId,
    pub bn_mean_name: String,
    pub bn_var_name: String,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub map_w: NodeId,
    pub map_b: NodeId,
    pub ca: CaParams,
}

/// A full residual block: two sub-units with one skip connection around both.
pub struct HabParams {
    pub units: [SubUnitParams; 2],
}

/// Batch-statistics snapshot produced by one normalization site in train
/// mode, to be folded into the named running buffers.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub mean_name: String,
    pub var_name: String,
    pub mean: Tensor,
    pub var: Tensor,
}

/// Per-stage network outputs as plain values.
#[derive(Clone, Debug)]
pub struct StageOutputs {
    /// One logit vector per scored stage, final stage last.
    pub stage_logits: Vec<Vec<f64>>,
    /// tanh(relu(final logits)), the pose weights, each in [0, 1).
    pub w_final: Vec<f64>,
    /// Weighted eight-point estimate from `w_final`; absent when regression
    /// was not requested or the weighted spectrum was degenerate.
    pub e_hat: Option<Matrix3<f64>>,
    /// Per refinement module: whether the carried-over context weights were
    /// all zero and replaced by uniform ones.
    pub uniform_context_fallback: Vec<bool>,
    /// True when regression was requested but the eigenvector was skipped.
    pub eigen_degenerate: bool,
}

impl StageOutputs {
    pub fn logits_final(&self) -> &[f64] {
        self.stage_logits.last().expect("at least one stage")
    }
}

/// On-tape handles for the differentiable stage outputs.
pub struct StageNodes {
    pub stage_logits: Vec<NodeId>,
    pub w_final: NodeId,
    pub e_hat: Option<NodeId>,
}

/// Everything one forward pass leaves behind: values, tape handles, the
/// parameter-name-to-leaf binding (for gradient collection), and pending
/// batch-norm statistics.
pub struct ForwardPass {
    pub outputs: StageOutputs,
    pub nodes: StageNodes,
    pub binding: HashMap<String, NodeId>,
    pub bn_updates: Vec<BnUpdate>,
}

/// Normalizes features against weighted context statistics: per channel,
/// u = Σ wᵢ fᵢ and σ = sqrt(Σ wᵢ (fᵢ − u)² + ε), output (f − u)/σ.
/// `weights` must be an `[n, 1]` column, nonnegative, summing to 1 within
/// 1e-9; rows with zero weight contribute nothing to u or σ.
pub fn context_normalize(
    tape: &mut Tape,
    features: NodeId,
    weights: NodeId,
    eps: f64,
) -> Result<NodeId, CascadeError> {
    let (n, _) = tape.value(features).shape();
    let wv = tape.value(weights);
    if wv.shape() != (n, 1) {
        return Err(CascadeError::Input(format!(
            "context weights shape {:?}, expected ({n}, 1)",
            wv.shape()
        )));
    }
    let sum: f64 = wv.data().iter().sum();
    if wv.data().iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(CascadeError::ContextWeights(format!(
            "sum {sum}, min {:?}",
            wv.data().iter().cloned().fold(f64::INFINITY, f64::min)
        )));
    }
    let (mean, std) = tape.weighted_moments(features, weights, eps)?;
    let centered = tape.sub(features, mean)?;
    Ok(tape.div(centered, std)?)
}

/// Learns one normalization weight per point: features go through a
/// two-layer likelihood stack (C → C/4 → 1 with relu), the result is
/// concatenated with the prior into two channels, mapped 2 → 4 → 1 with
/// relu, and softmax-normalized over the point axis. Output is a strictly
/// positive `[n, 1]` column summing to 1.
pub fn bacn_weights(
    tape: &mut Tape,
    p: &BacnParams,
    features: NodeId,
    prior: NodeId,
) -> Result<NodeId, CascadeError> {
    let h = tape.linear(features, p.l1w, Some(p.l1b))?;
    let h = tape.relu(h);
    let like = tape.linear(h, p.l2w, Some(p.l2b))?;
    let both = tape.concat_cols(like, prior)?;
    let h = tape.linear(both, p.f1w, Some(p.f1b))?;
    let h = tape.relu(h);
    let score = tape.linear(h, p.f2w, Some(p.f2b))?;
    Ok(tape.softmax_rows(score)?)
}

/// Gates each point's channels: grouped map C → C/r, relu, grouped map
/// C/r → C, sigmoid, multiply into the input.
pub fn channel_attention(
    tape: &mut Tape,
    p: &CaParams,
    features: NodeId,
) -> Result<NodeId, CascadeError> {
    let h = tape.grouped_linear(features, p.w1, Some(p.b1), p.groups)?;
    let h = tape.relu(h);
    let h = tape.grouped_linear(h, p.w2, Some(p.b2), p.groups)?;
    let gate = tape.sigmoid(h);
    Ok(tape.mul(features, gate)?)
}

const BN_EPS: f64 = 1e-5;
const CN_EPS: f64 = 1e-5;

fn sub_unit_forward(
    tape: &mut Tape,
    p: &SubUnitParams,
    features: NodeId,
    prior: NodeId,
    ctx_override: Option<NodeId>,
    updates: &mut Vec<BnUpdate>,
) -> Result<NodeId, CascadeError> {
    let ctx_w = match (ctx_override, &p.bacn) {
        (Some(w), _) => w,
        (None, Some(b)) => bacn_weights(tape, b, features, prior)?,
        (None, None) => {
            return Err(CascadeError::Input(
                "sub-unit without weight learner needs a context override".into(),
            ))
        }
    };
    let f = context_normalize(tape, features, ctx_w, CN_EPS)?;
    let (f, batch) = tape.batch_norm(
        f,
        p.bn_gamma,
        p.bn_beta,
        &p.running_mean,
        &p.running_var,
        BN_EPS,
    )?;
    if let Some((mean, var)) = batch {
        updates.push(BnUpdate {
            mean_name: p.bn_mean_name.clone(),
            var_name: p.bn_var_name.clone(),
            mean,
            var,
        });
    }
    let f = tape.relu(f);
    let f = tape.linear(f, p.map_w, Some(p.map_b))?;
    channel_attention(tape, &p.ca, f)
}

/// One residual block: two sub-units in sequence, then the block input
/// added back onto the result.
pub fn hab_forward(
    tape: &mut Tape,
    p: &HabParams,
    features: NodeId,
    prior: NodeId,
    ctx_override: Option<NodeId>,
) -> Result<(NodeId, Vec<BnUpdate>), CascadeError> {
    let mut updates = Vec::new();
    let mid = sub_unit_forward(tape, &p.units[0], features, prior, ctx_override, &mut updates)?;
    let out = sub_unit_forward(tape, &p.units[1], mid, prior, ctx_override, &mut updates)?;
    let res = tape.add(features, out)?;
    Ok((res, updates))
}

/// The staged classifier: a per-point lift, `feature_layers` residual
/// blocks with learned context weights, a logit head, and
/// `refinement_modules` refinement passes that re-lift
/// `[coords, prev logit, sigmoid(prev logit)]` and normalize context with
/// the previous stage's prediction weights.
pub struct CascadeModel {
    pub config: CascadeConfig,
    pub params: ParameterStore,
}

struct Builder {
    store: ParameterStore,
    rng: Option<ChaCha8Rng>,
}

impl Builder {
    fn weight(&mut self, name: String, rows: usize, cols: usize) {
        let t = match &mut self.rng {
            None => Tensor::zeros(rows, cols),
            Some(rng) => {
                let bound = (6.0 / (rows + cols) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound);
                let data: Vec<f64> = (0..rows * cols).map(|_| dist.sample(rng)).collect();
                Tensor::from_vec(rows, cols, data)
            }
        };
        self.store.register(name, t);
    }

    fn bias(&mut self, name: String, cols: usize) {
        self.store.register(name, Tensor::zeros(1, cols));
    }

    fn sub_unit(&mut self, prefix: &str, c: usize, groups: usize, reduction: usize, bacn: bool) {
        if bacn {
            self.weight(format!("{prefix}.bacn.l1.w"), c, c / 4);
            self.bias(format!("{prefix}.bacn.l1.b"), c / 4);
            self.weight(format!("{prefix}.bacn.l2.w"), c / 4, 1);
            self.bias(format!("{prefix}.bacn.l2.b"), 1);
            self.weight(format!("{prefix}.bacn.f1.w"), 2, 4);
            self.bias(format!("{prefix}.bacn.f1.b"), 4);
            self.weight(format!("{prefix}.bacn.f2.w"), 4, 1);
            self.bias(format!("{prefix}.bacn.f2.b"), 1);
        }
        self.store
            .register(format!("{prefix}.bn.g"), Tensor::filled(1, c, 1.0));
        self.store
            .register(format!("{prefix}.bn.b"), Tensor::zeros(1, c));
        self.store
            .register_buffer(format!("{prefix}.bn.rm"), Tensor::zeros(1, c));
        self.store
            .register_buffer(format!("{prefix}.bn.rv"), Tensor::filled(1, c, 1.0));
        self.weight(format!("{prefix}.map.w"), c, c);
        self.bias(format!("{prefix}.map.b"), c);
        self.weight(format!("{prefix}.ca.w1"), c, c / reduction / groups);
        self.bias(format!("{prefix}.ca.b1"), c / reduction);
        self.weight(format!("{prefix}.ca.w2"), c / reduction, c / groups);
        self.bias(format!("{prefix}.ca.b2"), c);
    }

    fn hab(&mut self, prefix: &str, c: usize, groups: usize, reduction: usize, bacn: bool) {
        self.sub_unit(&format!("{prefix}.u0"), c, groups, reduction, bacn);
        self.sub_unit(&format!("{prefix}.u1"), c, groups, reduction, bacn);
    }
}

impl CascadeModel {
    pub fn new(config: &CascadeConfig, init: Init) -> Result<Self, CascadeError> {
        config.validate()?;
        let rng = match init {
            Init::Zeros => None,
            Init::Seeded(s) => Some(ChaCha8Rng::seed_from_u64(s)),
        };
        let mut b = Builder {
            store: ParameterStore::new(),
            rng,
        };
        let c = config.channels;
        b.weight("lift.w".into(), 4, c);
        b.bias("lift.b".into(), c);
        for i in 0..config.feature_layers {
            b.hab(
                &format!("f{i:02}"),
                c,
                config.ca_groups,
                config.ca_reduction,
                true,
            );
        }
        b.weight("head0.w".into(), c, 1);
        b.bias("head0.b".into(), 1);
        for m in 1..=config.refinement_modules {
            b.weight(format!("r{m}.lift.w"), 6, c);
            b.bias(format!("r{m}.lift.b"), c);
            for j in 0..config.refine_layers {
                b.hab(
                    &format!("r{m}.h{j}"),
                    c,
                    config.ca_groups,
                    config.ca_reduction,
                    false,
                );
            }
            b.weight(format!("r{m}.head.w"), c, 1);
            b.bias(format!("r{m}.head.b"), 1);
        }
        Ok(CascadeModel {
            config: config.clone(),
            params: b.store,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.trainable_scalars()
    }

    /// Creates the tape node for every trainable parameter: leaves in train
    /// mode (so gradients accumulate), constants in inference mode.
    fn bind(&self, tape: &mut Tape) -> HashMap<String, NodeId> {
        let mut binding = HashMap::new();
        for entry in self.params.iter() {
            if !entry.trainable {
                continue;
            }
            let id = if tape.is_train() {
                tape.leaf(entry.value.clone())
            } else {
                tape.constant(entry.value.clone())
            };
            binding.insert(entry.name.clone(), id);
        }
        binding
    }

    fn bound(
        binding: &HashMap<String, NodeId>,
        name: &str,
    ) -> Result<NodeId, CascadeError> {
        binding
            .get(name)
            .copied()
            .ok_or_else(|| CascadeError::Input(format!("unbound parameter '{name}'")))
    }

    fn buffer(&self, name: &str) -> Result<Tensor, CascadeError> {
        self.params
            .get(name)
            .cloned()
            .ok_or_else(|| CascadeError::Input(format!("missing buffer '{name}'")))
    }

    fn bind_ca(
        &self,
        binding: &HashMap<String, NodeId>,
        prefix: &str,
    ) -> Result<CaParams, CascadeError> {
        Ok(CaParams {
            w1: Self::bound(binding, &format!("{prefix}.ca.w1"))?,
            b1: Self::bound(binding, &format!("{prefix}.ca.b1"))?,
            w2: Self::bound(binding, &format!("{prefix}.ca.w2"))?,
            b2: Self::bound(binding, &format!("{prefix}.ca.b2"))?,
            groups: self.config.ca_groups,
        })
    }

    fn bind_sub_unit(
        &self,
        binding: &HashMap<String, NodeId>,
        prefix: &str,
        with_bacn: bool,
    ) -> Result<SubUnitParams, CascadeError> {
        let bacn = if with_bacn {
            Some(BacnParams {
                l1w: Self::bound(binding, &format!("{prefix}.bacn.l1.w"))?,
                l1b: Self::bound(binding, &format!("{prefix}.bacn.l1.b"))?,
                l2w: Self::bound(binding, &format!("{prefix}.bacn.l2.w"))?,
                l2b: Self::bound(binding, &format!("{prefix}.bacn.l2.b"))?,
                f1w: Self::bound(binding, &format!("{prefix}.bacn.f1.w"))?,
                f1b: Self::bound(binding, &format!("{prefix}.bacn.f1.b"))?,
                f2w: Self::bound(binding, &format!("{prefix}.bacn.f2.w"))?,
                f2b: Self::bound(binding, &format!("{prefix}.bacn.f2.b"))?,
            })
        } else {
            None
        };
        Ok(SubUnitParams {
            bacn,
            bn_gamma: Self::bound(binding, &format!("{prefix}.bn.g"))?,
            bn_beta: Self::bound(binding, &format!("{prefix}.bn.b"))?,
            bn_mean_name: format!("{prefix}.bn.rm"),
            bn_var_name: format!("{prefix}.bn.rv"),
            running_mean: self.buffer(&format!("{prefix}.bn.rm"))?,
            running_var: self.buffer(&format!("{prefix}.bn.rv"))?,
            map_w: Self::bound(binding, &format!("{prefix}.map.w"))?,
            map_b: Self::bound(binding, &format!("{prefix}.map.b"))?,
            ca: self.bind_ca(binding, prefix)?,
        })
    }

    /// Assembles the tape-level parameter bundle for one residual block.
    /// Feature blocks carry weight learners; refinement blocks do not
    /// (their context weights always come from the previous stage).
    pub fn bind_hab(
        &self,
        tape: &mut Tape,
        prefix: &str,
        with_bacn: bool,
    ) -> Result<(HabParams, HashMap<String, NodeId>), CascadeError> {
        let binding = self.bind(tape);
        let hab = self.hab_from_binding(&binding, prefix, with_bacn)?;
        Ok((hab, binding))
    }

    fn hab_from_binding(
        &self,
        binding: &HashMap<String, NodeId>,
        prefix: &str,
        with_bacn: bool,
    ) -> Result<HabParams, CascadeError> {
        Ok(HabParams {
            units: [
                self.bind_sub_unit(binding, &format!("{prefix}.u0"), with_bacn)?,
                self.bind_sub_unit(binding, &format!("{prefix}.u1"), with_bacn)?,
            ],
        })
    }

    /// Full staged forward pass on the caller's tape. `want_regression`
    /// additionally runs the weighted eight-point solve on the final
    /// weights; a degenerate weighted spectrum is flagged rather than fatal.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        coords: &[Correspondence],
        prior: &[f64],
        want_regression: bool,
    ) -> Result<ForwardPass, CascadeError> {
        let n = coords.len();
        if n < 8 {
            return Err(CascadeError::Input(format!(
                "need at least 8 correspondences, got {n}"
            )));
        }
        if prior.len() != n {
            return Err(CascadeError::Input(format!(
                "prior length {} does not match {n} points",
                prior.len()
            )));
        }
        if prior.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(CascadeError::Input(
                "prior entries must lie in [0, 1]".into(),
            ));
        }
        let binding = self.bind(tape);
        let mut bn_updates = Vec::new();

        let coord_data: Vec<f64> = coords
            .iter()
            .flat_map(|c| [c.x1, c.y1, c.x2, c.y2])
            .collect();
        let coords_node = tape.constant(Tensor::from_vec(n, 4, coord_data));
        let prior_node = tape.constant(Tensor::col_from(prior));

        let lift_w = Self::bound(&binding, "lift.w")?;
        let lift_b = Self::bound(&binding, "lift.b")?;
        let mut f = tape.linear(coords_node, lift_w, Some(lift_b))?;
        for i in 0..self.config.feature_layers {
            let hab = self.hab_from_binding(&binding, &format!("f{i:02}"), true)?;
            let (out, upd) = hab_forward(tape, &hab, f, prior_node, None)?;
            bn_updates.extend(upd);
            f = out;
        }
        let head_w = Self::bound(&binding, "head0.w")?;
        let head_b = Self::bound(&binding, "head0.b")?;
        let mut stage_logits = vec![tape.linear(f, head_w, Some(head_b))?];
        let mut uniform_fallback = Vec::new();

        for m in 1..=self.config.refinement_modules {
            let prev = *stage_logits.last().expect("stage zero exists");
            let probs = tape.sigmoid(prev);
            let with_logit = tape.concat_cols(coords_node, prev)?;
            let input = tape.concat_cols(with_logit, probs)?;
            let lw = Self::bound(&binding, &format!("r{m}.lift.w"))?;
            let lb = Self::bound(&binding, &format!("r{m}.lift.b"))?;
            let mut g = tape.linear(input, lw, Some(lb))?;

            // Context weights carried over from the previous stage's
            // prediction confidence; all-zero confidence (every logit
            // nonpositive) falls back to uniform weights.
            let relu_prev = tape.relu(prev);
            let w_raw = tape.tanh(relu_prev);
            let total = tape.sum_rows(w_raw)?;
            let all_zero = tape.value(total).item() == 0.0;
            uniform_fallback.push(all_zero);
            let override_w = if all_zero {
                tape.constant(Tensor::filled(n, 1, 1.0 / n as f64))
            } else {
                tape.div(w_raw, total)?
            };

            for j in 0..self.config.refine_layers {
                let hab = self.hab_from_binding(&binding, &format!("r{m}.h{j}"), false)?;
                let (out, upd) = hab_forward(tape, &hab, g, prior_node, Some(override_w))?;
                bn_updates.extend(upd);
                g = out;
            }
            let hw = Self::bound(&binding, &format!("r{m}.head.w"))?;
            let hb = Self::bound(&binding, &format!("r{m}.head.b"))?;
            stage_logits.push(tape.linear(g, hw, Some(hb))?);
        }

        let final_logits = *stage_logits.last().expect("at least one stage");
        let relu_final = tape.relu(final_logits);
        let w_final = tape.tanh(relu_final);

        let mut eigen_degenerate = false;
        let e_hat_node = if want_regression {
            let design = tape.constant(design_matrix(coords));
            match eight_point_on_tape(tape, w_final, design, EIGENGAP_TOLERANCE) {
                Ok(node) => Some(node),
                Err(_) => {
                    eigen_degenerate = true;
                    None
                }
            }
        } else {
            None
        };

        let outputs = StageOutputs {
            stage_logits: stage_logits
                .iter()
                .map(|&id| tape.value(id).data().to_vec())
                .collect(),
            w_final: tape.value(w_final).data().to_vec(),
            e_hat: e_hat_node.map(|id| essential_from_vec9(tape.value(id))),
            uniform_context_fallback: uniform_fallback,
            eigen_degenerate,
        };
        Ok(ForwardPass {
            outputs,
            nodes: StageNodes {
                stage_logits,
                w_final,
                e_hat: e_hat_node,
            },
            binding,
            bn_updates,
        })
    }

    /// Folds batch statistics into the running buffers:
    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate], momentum: f64) {
        for u in updates {
            for (name, batch) in [(&u.mean_name, &u.mean), (&u.var_name, &u.var)] {
                let buf = self
                    .params
                    .get_mut(name)
                    .expect("update names come from this model's buffers");
                for (r, b) in buf.data_mut().iter_mut().zip(batch.data()) {
                    *r = momentum * *r + (1.0 - momentum) * b;
                }
            }
        }
    }
}

/// Runs the staged classifier as a plain function of its inputs. Train mode
/// also produces the weighted eight-point estimate; running batch-norm
/// buffers are left untouched either way.
pub fn cascade_forward(
    model: &CascadeModel,
    coords: &[Correspondence],
    prior: &[f64],
    mode: Mode,
) -> Result<StageOutputs, CascadeError> {
    let mut tape = Tape::new(mode);
    let want_regression = mode == Mode::Train;
    let pass = model.forward_on_tape(&mut tape, coords, prior, want_regression)?;
    Ok(pass.outputs)
}
