//! Guided class weighting for inlier/outlier cross entropy.
//!
//! A correspondence classifier is trained with a weighted two-class cross
//! entropy `L = lambda * L_pos + mu * L_neg`, where each class term is the
//! mean base loss over that class. The weights are re-derived from the
//! current confusion statistics of every pair so that, to first order in the
//! confusion counts, *any* step that decreases the loss cannot decrease the
//! targeted F-measure: the loss differential and the F differential have a
//! provably nonpositive product over all count moves.
//!
//! The derivation per pair, writing `x` for false-negative and `y` for
//! false-positive counts:
//!
//! - `a = (l_fn - l_tp) / n_pos` and `b = (l_fp - l_tn) / n_neg`, the
//!   first-order loss change per unit of `x` and `y`, from the mean base
//!   loss of each confusion category;
//! - `dF/dx`, `dF/dy`: forward differences of the F-measure in the counts;
//! - `rho = (dF/dx) / (dF/dy)`, the F trade-off ratio between the two kinds
//!   of mistakes;
//! - `lambda = rho b / (a + rho b)` and `mu = 1 - lambda`, which solves
//!   `lambda a / (mu b) = rho`.
//!
//! Whenever the derivation is inapplicable (a confusion category is empty,
//! `a` or `b` fails to be positive, or the F differential vanishes) the
//! weights fall back to `(1/2, 1/2)` and say so.

use crate::autodiff::{AdError, NodeId, Tape, Tensor};

/// Probability clamp applied inside the cross entropy so logs stay finite.
pub const PROB_CLAMP: f64 = 1e-7;

/// Confusion counts of one pair: `x` inliers predicted out (false
/// negatives), `y` outliers predicted in (false positives), out of `n_pos`
/// actual inliers and `n_neg` actual outliers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairCounts {
    pub n_pos: usize,
    pub n_neg: usize,
    pub x: usize,
    pub y: usize,
}

impl PairCounts {
    pub fn true_positives(&self) -> usize {
        self.n_pos - self.x
    }

    pub fn true_negatives(&self) -> usize {
        self.n_neg - self.y
    }
}

/// Mean base loss per confusion category; `None` when the category is empty.
#[derive(Clone, Copy, Debug, Default)]
pub struct CategoryLosses {
    pub tp: Option<f64>,
    pub fn_: Option<f64>,
    pub fp: Option<f64>,
    pub tn: Option<f64>,
}

/// Derived class weights plus the quantities they were derived from.
#[derive(Clone, Copy, Debug)]
pub struct GuidedWeights {
    pub lambda: f64,
    pub mu: f64,
    /// True when the dynamic derivation was inapplicable and `(0.5, 0.5)`
    /// was substituted; the diagnostic fields are then zero.
    pub fallback: bool,
    pub a: f64,
    pub b: f64,
    pub rho: f64,
    pub grad_f_x: f64,
    pub grad_f_y: f64,
}

impl GuidedWeights {
    fn fallback() -> Self {
        GuidedWeights {
            lambda: 0.5,
            mu: 0.5,
            fallback: true,
            a: 0.0,
            b: 0.0,
            rho: 0.0,
            grad_f_x: 0.0,
            grad_f_y: 0.0,
        }
    }

    /// Residual of the balance condition `lambda a / (mu b) = rho` the
    /// weights were solved from; `None` for fallback weights.
    pub fn balance_residual(&self) -> Option<f64> {
        if self.fallback {
            return None;
        }
        Some((self.lambda * self.a / (self.mu * self.b) - self.rho).abs())
    }

    /// First-order loss change for a count move of `(dx, dy)`.
    pub fn loss_delta(&self, dx: f64, dy: f64) -> f64 {
        self.lambda * self.a * dx + self.mu * self.b * dy
    }

    /// First-order F-measure change for a count move of `(dx, dy)`.
    pub fn f_delta(&self, dx: f64, dy: f64) -> f64 {
        self.grad_f_x * dx + self.grad_f_y * dy
    }
}

/// F-measure of order `n` from precision and recall; zero when both vanish.
pub fn f_measure_from_pr(p: f64, r: f64, n: f64) -> f64 {
    let n2 = n * n;
    let den = n2 * p + r;
    if den == 0.0 {
        return 0.0;
    }
    (1.0 + n2) * p * r / den
}

/// F-measure of order `n` straight from confusion counts
/// (`x` false negatives out of `n_pos` positives, `y` false positives).
/// Zero when no true positives remain.
pub fn f_measure_from_counts(n_pos: usize, x: usize, y: usize, n: f64) -> f64 {
    assert!(x <= n_pos, "false negatives exceed the positive count");
    let tp = (n_pos - x) as f64;
    if tp == 0.0 {
        return 0.0;
    }
    let n2 = n * n;
    (1.0 + n2) * tp / ((1.0 + n2) * tp + n2 * x as f64 + y as f64)
}

/// Forward differences of the F-measure in the two confusion counts:
/// `(F(x+1, y) - F(x, y), F(x, y+1) - F(x, y))`. At the top of a count's
/// range the forward step is impossible and the backward difference is used
/// instead, preserving the sign convention.
pub fn f_measure_forward_diffs(counts: &PairCounts, n: f64) -> (f64, f64) {
    let PairCounts { n_pos, n_neg, x, y } = *counts;
    let f0 = f_measure_from_counts(n_pos, x, y, n);
    let dfx = if x < n_pos {
        f_measure_from_counts(n_pos, x + 1, y, n) - f0
    } else {
        f0 - f_measure_from_counts(n_pos, x - 1, y, n)
    };
    let dfy = if y < n_neg {
        f_measure_from_counts(n_pos, x, y + 1, n) - f0
    } else {
        f0 - f_measure_from_counts(n_pos, x, y - 1, n)
    };
    (dfx, dfy)
}

/// Derives the guided class weights for one pair targeting the F-measure of
/// order `n`. Falls back to `(0.5, 0.5)` (with `fallback: true`) whenever
/// the inputs cannot support the derivation.
pub fn guided_weights(counts: &PairCounts, losses: &CategoryLosses, n: f64) -> GuidedWeights {
    if counts.n_pos == 0 || counts.n_neg == 0 {
        return GuidedWeights::fallback();
    }
    let (l_tp, l_fn, l_fp, l_tn) = match (losses.tp, losses.fn_, losses.fp, losses.tn) {
        (Some(tp), Some(fn_), Some(fp), Some(tn)) => (tp, fn_, fp, tn),
        _ => return GuidedWeights::fallback(),
    };
    let a = (l_fn - l_tp) / counts.n_pos as f64;
    let b = (l_fp - l_tn) / counts.n_neg as f64;
    if a <= 0.0 || b <= 0.0 {
        return GuidedWeights::fallback();
    }
    let (dfx, dfy) = f_measure_forward_diffs(counts, n);
    if dfy == 0.0 {
        return GuidedWeights::fallback();
    }
    let rho = dfx / dfy;
    if !rho.is_finite() || rho <= 0.0 {
        return GuidedWeights::fallback();
    }
    // Solve lambda a = rho mu b with lambda + mu = 1. The smaller weight is
    // computed directly (relative accuracy ~eps even when the ratio is
    // extreme) and the larger as the exact-to-a-half-ulp complement; this
    // keeps both the bitwise sum and the balance residual tight. Computing
    // the larger weight first would leave the complement with only absolute
    // accuracy and blow up the residual for lopsided ratios.
    let rb = rho * b;
    let s = a + rb;
    let (lambda, mu) = if rb <= a {
        let l = rb / s;
        (l, 1.0 - l)
    } else {
        let m = a / s;
        (1.0 - m, m)
    };
    GuidedWeights {
        lambda,
        mu,
        fallback: false,
        a,
        b,
        rho,
        grad_f_x: dfx,
        grad_f_y: dfy,
    }
}

/// The six partial derivatives of the F-measure chain through precision and
/// recall, evaluated at a count state. A second, independent route to the
/// count sensitivities used to cross-check `f_measure_forward_diffs`.
#[derive(Clone, Copy, Debug)]
pub struct AnalyticDiffs {
    /// dF/dP and dF/dR at the current precision/recall.
    pub f_p: f64,
    pub f_r: f64,
    /// dP/dx, dP/dy: precision response to each mistake count.
    pub p_x: f64,
    pub p_y: f64,
    /// dR/dx, dR/dy: recall responds to false negatives only.
    pub r_x: f64,
    pub r_y: f64,
}

impl AnalyticDiffs {
    /// Chain-rule F sensitivity to the false-negative count.
    pub fn df_dx(&self) -> f64 {
        self.f_p * self.p_x + self.f_r * self.r_x
    }

    /// Chain-rule F sensitivity to the false-positive count.
    pub fn df_dy(&self) -> f64 {
        self.f_p * self.p_y + self.f_r * self.r_y
    }
}

/// Continuous partial derivatives of the order-`n` F-measure with respect to
/// the confusion counts, via precision and recall. `None` when no true
/// positives remain (precision's derivative is singular there).
pub fn analytic_partials(counts: &PairCounts, n: f64) -> Option<AnalyticDiffs> {
    if counts.n_pos == 0 || counts.true_positives() == 0 {
        return None;
    }
    let tp = counts.true_positives() as f64;
    let y = counts.y as f64;
    let n_pos = counts.n_pos as f64;
    let p = tp / (tp + y);
    let r = tp / n_pos;
    let n2 = n * n;
    let den = n2 * p + r;
    let f_p = (1.0 + n2) * r * r / (den * den);
    let f_r = n2 * (1.0 + n2) * p * p / (den * den);
    Some(AnalyticDiffs {
        f_p,
        f_r,
        p_x: -y / ((tp + y) * (tp + y)),
        p_y: -tp / ((tp + y) * (tp + y)),
        r_x: -1.0 / n_pos,
        r_y: 0.0,
    })
}

/// Outcome of checking one count state against the descent/F-measure
/// alignment guarantee.
#[derive(Clone, Copy, Debug)]
pub struct CorrelationReport {
    pub weights: GuidedWeights,
    /// True when the weights fell back to `(0.5, 0.5)`: the guarantee's
    /// premises fail and the checks below are skipped (left at zero).
    pub vacuous: bool,
    /// `|lambda a / (mu b) - rho|`.
    pub eq_residual: f64,
    /// Largest `dl * dF_linear` over integer moves in `[-2, 2]^2 \ {0}`
    /// that keep both counts in range.
    pub max_linear_product: f64,
    /// Largest `dl * dF_exact` over the two unit forward steps, with the
    /// exact (not linearized) F difference.
    pub max_true_product: f64,
}

impl CorrelationReport {
    /// Whether every non-vacuous check holds: residual below 1e-9 and no
    /// descent direction that raises the loss while raising F (or vice
    /// versa) beyond roundoff.
    pub fn passes(&self) -> bool {
        self.vacuous
            || (self.eq_residual < 1e-9
                && self.max_linear_product <= 1e-12
                && self.max_true_product <= 1e-12)
    }
}

/// Checks that, at this count state, no first-order count move can decrease
/// the weighted loss while decreasing the F-measure (and conversely): the
/// signed product of the two differentials is nonpositive for every move.
pub fn verify_negative_correlation(
    counts: &PairCounts,
    losses: &CategoryLosses,
    n: f64,
) -> CorrelationReport {
    let weights = guided_weights(counts, losses, n);
    if weights.fallback {
        return CorrelationReport {
            weights,
            vacuous: true,
            eq_residual: 0.0,
            max_linear_product: 0.0,
            max_true_product: 0.0,
        };
    }
    let eq_residual = weights.balance_residual().expect("non-fallback weights");
    let mut max_linear = f64::NEG_INFINITY;
    for dx in -2i64..=2 {
        for dy in -2i64..=2 {
            if dx == 0 && dy == 0 {
                continue;
            }
            let nx = counts.x as i64 + dx;
            let ny = counts.y as i64 + dy;
            if nx < 0 || ny < 0 || nx > counts.n_pos as i64 || ny > counts.n_neg as i64 {
                continue;
            }
            let product =
                weights.loss_delta(dx as f64, dy as f64) * weights.f_delta(dx as f64, dy as f64);
            max_linear = max_linear.max(product);
        }
    }
    let f0 = f_measure_from_counts(counts.n_pos, counts.x, counts.y, n);
    let mut max_true = f64::NEG_INFINITY;
    if counts.x < counts.n_pos {
        let df = f_measure_from_counts(counts.n_pos, counts.x + 1, counts.y, n) - f0;
        max_true = max_true.max(weights.loss_delta(1.0, 0.0) * df);
    }
    if counts.y < counts.n_neg {
        let df = f_measure_from_counts(counts.n_pos, counts.x, counts.y + 1, n) - f0;
        max_true = max_true.max(weights.loss_delta(0.0, 1.0) * df);
    }
    CorrelationReport {
        weights,
        vacuous: false,
        eq_residual,
        max_linear_product: max_linear,
        max_true_product: max_true,
    }
}

/// Aggregate outcome of fuzzing the weight solver and the correlation
/// guarantee over randomly drawn count/loss states.
#[derive(Clone, Debug, serde::Serialize)]
pub struct TheoremFuzzReport {
    pub samples: usize,
    pub guidance: Vec<f64>,
    /// Count state / guidance combinations evaluated (samples x guidance).
    pub evaluated: usize,
    /// Combinations that hit the `(0.5, 0.5)` fallback (vacuous checks).
    pub fallbacks: usize,
    pub fallback_rate: f64,
    pub max_eq_residual: f64,
    pub max_linear_product: f64,
    pub max_true_product: f64,
    /// Non-vacuous combinations that failed any check; must be zero.
    pub violations: usize,
    /// Combinations where the sum of the two weights was not exactly 1.0.
    pub sum_violations: usize,
}

/// Draws `samples` random count states (counts up to 10^4, category losses
/// ordered so mistakes cost more than correct calls) and checks the weight
/// solver's guarantees for every guidance order in `guidance`.
pub fn run_theorem_fuzz(samples: usize, guidance: &[f64], seed: u64) -> TheoremFuzzReport {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut report = TheoremFuzzReport {
        samples,
        guidance: guidance.to_vec(),
        evaluated: 0,
        fallbacks: 0,
        fallback_rate: 0.0,
        max_eq_residual: 0.0,
        max_linear_product: f64::NEG_INFINITY,
        max_true_product: f64::NEG_INFINITY,
        violations: 0,
        sum_violations: 0,
    };
    for _ in 0..samples {
        let n_pos = rng.gen_range(2usize..=10_000);
        let n_neg = rng.gen_range(2usize..=10_000);
        let counts = PairCounts {
            n_pos,
            n_neg,
            x: rng.gen_range(0..=n_pos),
            y: rng.gen_range(0..=n_neg),
        };
        let l_tp = rng.gen_range(0.01..1.0);
        let l_tn = rng.gen_range(0.01..1.0);
        let losses = CategoryLosses {
            tp: (counts.x < n_pos).then_some(l_tp),
            fn_: (counts.x > 0).then_some(l_tp + rng.gen_range(0.005..2.0)),
            fp: (counts.y > 0).then_some(l_tn + rng.gen_range(0.005..2.0)),
            tn: (counts.y < n_neg).then_some(l_tn),
        };
        for &n in guidance {
            report.evaluated += 1;
            let check = verify_negative_correlation(&counts, &losses, n);
            if (check.weights.lambda + check.weights.mu).to_bits() != 1.0f64.to_bits() {
                report.sum_violations += 1;
            }
            if check.vacuous {
                report.fallbacks += 1;
                continue;
            }
            report.max_eq_residual = report.max_eq_residual.max(check.eq_residual);
            report.max_linear_product = report.max_linear_product.max(check.max_linear_product);
            report.max_true_product = report.max_true_product.max(check.max_true_product);
            if !check.passes() {
                report.violations += 1;
            }
        }
    }
    if report.evaluated > 0 {
        report.fallback_rate = report.fallbacks as f64 / report.evaluated as f64;
    }
    report
}

/// How the per-class weights of the cross entropy are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Dynamic `(lambda, mu)` re-derived from each pair's confusion stats.
    Guided,
    /// Fixed `(0.5, 0.5)`: each class contributes its mean equally.
    InstanceBalanced,
    /// Plain mean cross entropy over all points, ignoring class sizes.
    CrossEntropy,
}

impl LossKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "guided" => Some(LossKind::Guided),
            "ibce" => Some(LossKind::InstanceBalanced),
            "ce" => Some(LossKind::CrossEntropy),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::Guided => "guided",
            LossKind::InstanceBalanced => "ibce",
            LossKind::CrossEntropy => "ce",
        }
    }
}

/// Per-pair confusion statistics from detached per-point base losses.
///
/// `predicted[i]` is the classifier's current hard decision for point `i`
/// and `labels[i]` the ground truth; `base_losses[i]` is that point's
/// (detached) cross-entropy value used to estimate the category means.
pub fn pair_statistics(
    base_losses: &[f64],
    labels: &[bool],
    predicted: &[bool],
) -> (PairCounts, CategoryLosses) {
    assert_eq!(base_losses.len(), labels.len());
    assert_eq!(predicted.len(), labels.len());
    let mut counts = PairCounts {
        n_pos: 0,
        n_neg: 0,
        x: 0,
        y: 0,
    };
    let mut sums = [0.0f64; 4];
    let mut nums = [0usize; 4];
    for i in 0..labels.len() {
        let cat = match (labels[i], predicted[i]) {
            (true, true) => 0,   // TP
            (true, false) => 1,  // FN
            (false, true) => 2,  // FP
            (false, false) => 3, // TN
        };
        sums[cat] += base_losses[i];
        nums[cat] += 1;
        if labels[i] {
            counts.n_pos += 1;
            if !predicted[i] {
                counts.x += 1;
            }
        } else {
            counts.n_neg += 1;
            if predicted[i] {
                counts.y += 1;
            }
        }
    }
    let mean = |k: usize| -> Option<f64> {
        if nums[k] > 0 {
            Some(sums[k] / nums[k] as f64)
        } else {
            None
        }
    };
    (
        counts,
        CategoryLosses {
            tp: mean(0),
            fn_: mean(1),
            fp: mean(2),
            tn: mean(3),
        },
    )
}

/// Detached per-point binary cross entropy of a logit against a label, with
/// the probability clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub fn bce_value(logit: f64, label: bool) -> f64 {
    let p = (1.0 / (1.0 + (-logit).exp())).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// How a pair's per-point losses are aggregated on the tape.
#[derive(Clone, Copy, Debug)]
pub enum ClassWeighting {
    /// `lambda * mean(pos losses) + mu * mean(neg losses)`. Requires both
    /// classes to be present.
    PerClass { lambda: f64, mu: f64 },
    /// Plain mean over every point.
    PlainMean,
}

/// Builds the clamped binary cross entropy of `logits` (`[n, 1]`) against
/// `labels` on the tape, aggregated per `weighting`. The class weights are
/// constants on the tape: gradients flow through the logits only.
pub fn classification_loss_on_tape(
    tape: &mut Tape,
    logits: NodeId,
    labels: &[bool],
    weighting: ClassWeighting,
) -> Result<NodeId, AdError> {
    let n = labels.len();
    if tape.value(logits).shape() != (n, 1) {
        return Err(AdError::ShapeMismatch {
            op: "classification_loss",
            lhs: (n, 1),
            rhs: tape.value(logits).shape(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = n - n_pos;
    let (wp, wn) = match weighting {
        ClassWeighting::PerClass { lambda, mu } => {
            if n_pos == 0 || n_neg == 0 {
                return Err(AdError::InvalidOperand {
                    op: "classification_loss",
                    detail: "per-class weighting needs both classes present".into(),
                });
            }
            (lambda / n_pos as f64, mu / n_neg as f64)
        }
        ClassWeighting::PlainMean => {
            if n == 0 {
                return Err(AdError::InvalidOperand {
                    op: "classification_loss",
                    detail: "no points".into(),
                });
            }
            (1.0 / n as f64, 1.0 / n as f64)
        }
    };
    let mut pos_w = Tensor::zeros(n, 1);
    let mut neg_w = Tensor::zeros(n, 1);
    for (i, &l) in labels.iter().enumerate() {
        if l {
            pos_w.set(i, 0, wp);
        } else {
            neg_w.set(i, 0, wn);
        }
    }
    let p = tape.sigmoid(logits);
    let p = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let one_minus = tape.scale_shift(p, -1.0, 1.0);
    let log_p = tape.log(p)?;
    let log_q = tape.log(one_minus)?;
    let wpos = tape.constant(pos_w);
    let wneg = tape.constant(neg_w);
    let tp = tape.mul(log_p, wpos)?;
    let tn = tape.mul(log_q, wneg)?;
    let s = tape.add(tp, tn)?;
    let total = tape.sum_all(s)?;
    Ok(tape.scale_shift(total, -1.0, 0.0))
}

/// Full per-pair guided loss: reads the current logits off the tape, forms
/// confusion statistics with the strict `p > 0.5` decision rule, derives
/// `(lambda, mu)`, and builds the weighted cross entropy. The weights are
/// constants of the backward pass, recomputed fresh on every call.
///
/// Errors when the pair has a single class (such pairs are skipped upstream).
pub fn guided_pair_loss_on_tape(
    tape: &mut Tape,
    logits: NodeId,
    labels: &[bool],
    n: f64,
) -> Result<(NodeId, GuidedWeights), AdError> {
    let values = tape.value(logits).data().to_vec();
    if values.len() != labels.len() {
        return Err(AdError::ShapeMismatch {
            op: "guided_pair_loss",
            lhs: (labels.len(), 1),
            rhs: tape.value(logits).shape(),
        });
    }
    // prob > 0.5 strictly <=> logit > 0 strictly; ties go to negative.
    let predicted: Vec<bool> = values.iter().map(|&v| v > 0.0).collect();
    let base: Vec<f64> = values
        .iter()
        .zip(labels)
        .map(|(&v, &l)| bce_value(v, l))
        .collect();
    let (counts, cat_losses) = pair_statistics(&base, labels, &predicted);
    let weights = guided_weights(&counts, &cat_losses, n);
    let loss = classification_loss_on_tape(
        tape,
        logits,
        labels,
        ClassWeighting::PerClass {
            lambda: weights.lambda,
            mu: weights.mu,
        },
    )?;
    Ok((loss, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Mode};
    use approx::assert_relative_eq;

    /// The worked reference configuration used across the weight tests.
    fn reference() -> (PairCounts, CategoryLosses) {
        (
            PairCounts {
                n_pos: 100,
                n_neg: 900,
                x: 20,
                y: 90,
            },
            CategoryLosses {
                tp: Some(0.2),
                fn_: Some(1.5),
                fp: Some(1.2),
                tn: Some(0.1),
            },
        )
    }

    #[test]
    fn f_measure_count_form_matches_pr_form() {
        // tp = 8, x = 2, y = 3: P = 8/11, R = 8/10.
        let via_counts = f_measure_from_counts(10, 2, 3, 1.0);
        let via_pr = f_measure_from_pr(8.0 / 11.0, 0.8, 1.0);
        assert_relative_eq!(via_counts, 16.0 / 21.0, epsilon = 1e-15);
        assert_relative_eq!(via_pr, via_counts, epsilon = 1e-15);
        assert_eq!(f_measure_from_counts(10, 10, 3, 1.0), 0.0);
        assert_relative_eq!(f_measure_from_pr(0.5, 1.0, 1.0), 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn forward_differences_match_direct_fractions() {
        let (counts, _) = reference();
        let (dfx, dfy) = f_measure_forward_diffs(&counts, 1.0);
        // F1(20, 90) = 160/270, F1(21, 90) = 158/269, F1(20, 91) = 160/271.
        assert_relative_eq!(dfx, 158.0 / 269.0 - 160.0 / 270.0, epsilon = 1e-15);
        assert_relative_eq!(dfy, 160.0 / 271.0 - 160.0 / 270.0, epsilon = 1e-15);
        assert_relative_eq!(dfx, -380.0 / 72630.0, epsilon = 1e-15);
        assert_relative_eq!(dfy, -160.0 / 73170.0, epsilon = 1e-15);
    }

    #[test]
    fn difference_clamps_at_the_top_of_each_range() {
        let counts = PairCounts {
            n_pos: 5,
            n_neg: 7,
            x: 5,
            y: 7,
        };
        let (dfx, dfy) = f_measure_forward_diffs(&counts, 1.0);
        // Backward differences keep the "more mistakes hurt" sign.
        assert!(dfx < 0.0);
        assert!(dfy == 0.0, "F is already 0 with no true positives");
    }

    #[test]
    fn reference_weights_match_the_closed_form() {
        let (counts, losses) = reference();
        let w = guided_weights(&counts, &losses, 1.0);
        assert!(!w.fallback);

        let a = (1.5 - 0.2) / 100.0;
        let b = (1.2 - 0.1) / 900.0;
        let rho = (380.0 / 72630.0) / (160.0 / 73170.0);
        assert_relative_eq!(w.a, a, epsilon = 1e-15);
        assert_relative_eq!(w.b, b, epsilon = 1e-15);
        assert_relative_eq!(w.rho, rho, epsilon = 1e-12);
        assert_relative_eq!(w.rho, 2.392657, epsilon = 1e-6);
        assert_relative_eq!(w.lambda, rho * b / (a + rho * b), epsilon = 1e-15);
        assert_relative_eq!(w.lambda, 0.183641, epsilon = 1e-6);
        assert_relative_eq!(w.mu, 0.816359, epsilon = 1e-6);

        // One extra false negative raises the loss by lambda * a.
        assert_relative_eq!(w.loss_delta(1.0, 0.0), w.lambda * a, epsilon = 1e-15);
        assert_relative_eq!(w.loss_delta(1.0, 0.0), 0.0023874, epsilon = 1e-6);
    }

    #[test]
    fn lambda_and_mu_sum_to_one_bitwise() {
        let (counts, losses) = reference();
        for n in [0.2, 0.5, 1.0, 2.0, 5.0] {
            let w = guided_weights(&counts, &losses, n);
            assert_eq!((w.lambda + w.mu).to_bits(), 1.0f64.to_bits());
            assert!(w.lambda > 0.0 && w.lambda < 1.0);
        }
    }

    #[test]
    fn balance_residual_is_tiny() {
        let (counts, losses) = reference();
        let w = guided_weights(&counts, &losses, 1.0);
        assert!(w.balance_residual().unwrap() < 1e-12);
    }

    #[test]
    fn loss_descent_cannot_reduce_the_f_measure() {
        let (counts, losses) = reference();
        for n in [0.5, 1.0, 2.0] {
            let w = guided_weights(&counts, &losses, n);
            for dx in [-3.0, -1.0, 0.0, 1.0, 3.0] {
                for dy in [-5.0, -1.0, 0.0, 1.0, 5.0] {
                    let dl = w.loss_delta(dx, dy);
                    let df = w.f_delta(dx, dy);
                    assert!(
                        dl * df <= 1e-15,
                        "dl={dl} df={df} at ({dx},{dy}), n={n}"
                    );
                }
            }
        }
    }

    #[test]
    fn lambda_grows_with_the_f_measure_order() {
        let (counts, losses) = reference();
        let l_half = guided_weights(&counts, &losses, 0.5).lambda;
        let l_one = guided_weights(&counts, &losses, 1.0).lambda;
        let l_two = guided_weights(&counts, &losses, 2.0).lambda;
        // Larger n leans the F-measure toward recall, so missing inliers
        // must cost more: the positive-class weight rises.
        assert!(l_half < l_one && l_one < l_two, "{l_half} {l_one} {l_two}");
    }

    #[test]
    fn fallback_cases_are_flagged() {
        let (counts, losses) = reference();

        let mut no_fp = losses;
        no_fp.fp = None;
        assert!(guided_weights(&counts, &no_fp, 1.0).fallback);

        let mut inverted = losses;
        inverted.tp = Some(2.0); // a <= 0
        let w = guided_weights(&counts, &inverted, 1.0);
        assert!(w.fallback);
        assert_eq!(w.lambda, 0.5);
        assert_eq!(w.mu, 0.5);

        let mut flat_b = losses;
        flat_b.tn = Some(1.2); // b == 0
        assert!(guided_weights(&counts, &flat_b, 1.0).fallback);

        let empty_pos = PairCounts {
            n_pos: 0,
            n_neg: 900,
            x: 0,
            y: 90,
        };
        assert!(guided_weights(&empty_pos, &losses, 1.0).fallback);

        // All inliers misclassified: no TP category.
        let all_missed = PairCounts {
            n_pos: 100,
            n_neg: 900,
            x: 100,
            y: 90,
        };
        let mut no_tp = losses;
        no_tp.tp = None;
        assert!(guided_weights(&all_missed, &no_tp, 1.0).fallback);
    }

    #[test]
    fn pair_statistics_sorts_points_into_categories() {
        let labels = [true, true, true, false, false];
        let predicted = [true, false, true, true, false];
        let losses = [0.1, 1.0, 0.3, 0.8, 0.05];
        let (counts, cats) = pair_statistics(&losses, &labels, &predicted);
        assert_eq!(
            counts,
            PairCounts {
                n_pos: 3,
                n_neg: 2,
                x: 1,
                y: 1
            }
        );
        assert_relative_eq!(cats.tp.unwrap(), 0.2);
        assert_relative_eq!(cats.fn_.unwrap(), 1.0);
        assert_relative_eq!(cats.fp.unwrap(), 0.8);
        assert_relative_eq!(cats.tn.unwrap(), 0.05);
    }

    #[test]
    fn bce_value_is_clamped_and_correct() {
        // Moderate logit: exact formula.
        let p = 1.0 / (1.0 + (-1.5f64).exp());
        assert_relative_eq!(bce_value(1.5, true), -p.ln(), epsilon = 1e-15);
        assert_relative_eq!(bce_value(1.5, false), -(1.0 - p).ln(), epsilon = 1e-15);
        // Extreme logits stay finite at the clamp ceiling.
        let worst = -(PROB_CLAMP).ln();
        assert_relative_eq!(bce_value(-1000.0, true), worst, epsilon = 1e-9);
        assert_relative_eq!(bce_value(1000.0, false), worst, epsilon = 1e-9);
    }

    #[test]
    fn tape_loss_matches_detached_values() {
        let logits = [1.2, -0.7, 0.3, -2.0, 0.9];
        let labels = [true, true, false, false, true];
        let lambda = 0.3;
        let mu = 0.7;

        let mut tape = Tape::new(Mode::Train);
        let l = tape.leaf(Tensor::col_from(&logits));
        let loss = classification_loss_on_tape(
            &mut tape,
            l,
            &labels,
            ClassWeighting::PerClass { lambda, mu },
        )
        .unwrap();

        let pos: f64 = logits
            .iter()
            .zip(&labels)
            .filter(|(_, &lab)| lab)
            .map(|(&lo, _)| bce_value(lo, true))
            .sum::<f64>()
            / 3.0;
        let neg: f64 = logits
            .iter()
            .zip(&labels)
            .filter(|(_, &lab)| !lab)
            .map(|(&lo, _)| bce_value(lo, false))
            .sum::<f64>()
            / 2.0;
        assert_relative_eq!(
            tape.value(loss).item(),
            lambda * pos + mu * neg,
            epsilon = 1e-14
        );

        let mut tape = Tape::new(Mode::Train);
        let l = tape.leaf(Tensor::col_from(&logits));
        let loss =
            classification_loss_on_tape(&mut tape, l, &labels, ClassWeighting::PlainMean).unwrap();
        let mean: f64 = logits
            .iter()
            .zip(&labels)
            .map(|(&lo, &lab)| bce_value(lo, lab))
            .sum::<f64>()
            / 5.0;
        assert_relative_eq!(tape.value(loss).item(), mean, epsilon = 1e-14);
    }

    #[test]
    fn tape_loss_gradient_matches_finite_differences() {
        let labels = [true, false, true, false, false, true];
        let report = grad_check(
            |tape, ids| {
                classification_loss_on_tape(
                    tape,
                    ids[0],
                    &labels,
                    ClassWeighting::PerClass {
                        lambda: 0.183641,
                        mu: 0.816359,
                    },
                )
            },
            &[(
                "logits",
                Tensor::col_from(&[0.5, -1.1, 2.2, 0.05, -3.0, 0.7]),
            )],
            16,
            1e-5,
            11,
        )
        .unwrap();
        assert!(report.passes(1e-6), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn single_class_pair_is_rejected_for_per_class_weighting() {
        let mut tape = Tape::new(Mode::Train);
        let l = tape.leaf(Tensor::col_from(&[0.5, 1.0]));
        let err = classification_loss_on_tape(
            &mut tape,
            l,
            &[true, true],
            ClassWeighting::PerClass {
                lambda: 0.5,
                mu: 0.5,
            },
        );
        assert!(err.is_err());
    }

    #[test]
    fn analytic_route_agrees_with_forward_differences() {
        let (counts, _) = reference();
        let part = analytic_partials(&counts, 1.0).unwrap();
        assert_eq!(part.r_y, 0.0);
        assert!(part.f_p >= 0.0 && part.f_r >= 0.0);
        let (dfx, dfy) = f_measure_forward_diffs(&counts, 1.0);
        // Two independent derivative routes, 5% agreement at this scale.
        assert_relative_eq!(part.df_dx(), dfx, max_relative = 0.05);
        assert_relative_eq!(part.df_dy(), dfy, max_relative = 0.05);
        // Undefined once no true positives remain.
        let exhausted = PairCounts {
            n_pos: 5,
            n_neg: 5,
            x: 5,
            y: 2,
        };
        assert!(analytic_partials(&exhausted, 1.0).is_none());
    }

    #[test]
    fn correlation_check_passes_on_the_reference_state() {
        let (counts, losses) = reference();
        let rep = verify_negative_correlation(&counts, &losses, 1.0);
        assert!(!rep.vacuous);
        assert!(rep.passes());
        assert!(rep.eq_residual < 1e-9);
        assert!(rep.max_linear_product <= 1e-12);
        assert!(rep.max_true_product <= 1e-12);
        // Unit step in false negatives: loss up by 0.0023874, F down by
        // 0.0052320 -- opposite signs as guaranteed.
        let dl = rep.weights.loss_delta(1.0, 0.0);
        let df = f_measure_from_counts(counts.n_pos, counts.x + 1, counts.y, 1.0)
            - f_measure_from_counts(counts.n_pos, counts.x, counts.y, 1.0);
        assert_relative_eq!(dl, 0.0023874, epsilon = 1e-6);
        assert_relative_eq!(df, -0.0052320, epsilon = 1e-6);
        assert!(dl * df < 0.0);
    }

    #[test]
    fn correlation_check_is_vacuous_on_degenerate_stats() {
        let counts = PairCounts {
            n_pos: 10,
            n_neg: 10,
            x: 0,
            y: 0,
        };
        // No mistakes: the FN and FP categories are empty, so the weights
        // fall back to even and the guarantee has nothing to say.
        let losses = CategoryLosses {
            tp: Some(0.1),
            fn_: None,
            fp: None,
            tn: Some(0.1),
        };
        let rep = verify_negative_correlation(&counts, &losses, 1.0);
        assert!(rep.vacuous);
        assert!(rep.weights.fallback);
        assert_eq!(rep.weights.lambda, 0.5);
        assert!(rep.passes());
    }

    #[test]
    fn fuzzing_the_solver_finds_no_violations() {
        let rep = run_theorem_fuzz(500, &[0.2, 0.5, 1.0, 2.0], 7);
        assert_eq!(rep.evaluated, 2000);
        assert_eq!(rep.violations, 0);
        assert_eq!(rep.sum_violations, 0);
        assert!(rep.max_eq_residual < 1e-9, "{}", rep.max_eq_residual);
        assert!(rep.max_linear_product <= 1e-12);
        assert!(rep.max_true_product <= 1e-12);
        assert!(rep.fallback_rate < 0.05);
    }

    #[test]
    fn guided_pair_loss_matches_manual_composition() {
        let logits = [2.0, -0.5, 1.1, -1.8, 0.4, -0.2, 3.0, -2.5];
        let labels = [true, true, true, false, false, false, true, false];

        let mut tape = Tape::new(Mode::Train);
        let l = tape.leaf(Tensor::col_from(&logits));
        let (loss, w) = guided_pair_loss_on_tape(&mut tape, l, &labels, 1.0).unwrap();
        assert!(!w.fallback);

        let predicted: Vec<bool> = logits.iter().map(|&v| v > 0.0).collect();
        let base: Vec<f64> = logits
            .iter()
            .zip(&labels)
            .map(|(&v, &lab)| bce_value(v, lab))
            .collect();
        let (counts, cats) = pair_statistics(&base, &labels, &predicted);
        let expect_w = guided_weights(&counts, &cats, 1.0);
        assert_eq!(w.lambda.to_bits(), expect_w.lambda.to_bits());

        let pos: f64 = base
            .iter()
            .zip(&labels)
            .filter(|(_, &lab)| lab)
            .map(|(&b, _)| b)
            .sum::<f64>()
            / 4.0;
        let neg: f64 = base
            .iter()
            .zip(&labels)
            .filter(|(_, &lab)| !lab)
            .map(|(&b, _)| b)
            .sum::<f64>()
            / 4.0;
        assert_relative_eq!(
            tape.value(loss).item(),
            w.lambda * pos + w.mu * neg,
            epsilon = 1e-14
        );

        // Same inputs, fresh derivation: bitwise identical weights.
        let mut tape2 = Tape::new(Mode::Train);
        let l2 = tape2.leaf(Tensor::col_from(&logits));
        let (_, w2) = guided_pair_loss_on_tape(&mut tape2, l2, &labels, 1.0).unwrap();
        assert_eq!(w.lambda.to_bits(), w2.lambda.to_bits());
    }

    #[test]
    fn even_weights_and_half_probs_give_log_two() {
        // Logit 0 -> p = 0.5 for every point: the weighted loss collapses
        // to -log(1/2) regardless of the class split.
        let labels = [true, false, true, false, false];
        let mut tape = Tape::new(Mode::Train);
        let l = tape.leaf(Tensor::zeros(5, 1));
        let loss = classification_loss_on_tape(
            &mut tape,
            l,
            &labels,
            ClassWeighting::PerClass {
                lambda: 0.5,
                mu: 0.5,
            },
        )
        .unwrap();
        assert_relative_eq!(tape.value(loss).item(), (2.0f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn extreme_correct_predictions_give_negligible_loss() {
        let labels = [true, true, false, false];
        let mut tape = Tape::new(Mode::Train);
        let l = tape.leaf(Tensor::col_from(&[50.0, 60.0, -55.0, -70.0]));
        let loss = classification_loss_on_tape(
            &mut tape,
            l,
            &labels,
            ClassWeighting::PerClass {
                lambda: 0.5,
                mu: 0.5,
            },
        )
        .unwrap();
        let v = tape.value(loss).item();
        assert!(v >= 0.0 && v < 1e-6, "{v}");
    }

    #[test]
    fn zero_mu_ignores_the_negative_class() {
        let labels = [true, false];
        let mut tape = Tape::new(Mode::Train);
        let l = tape.leaf(Tensor::col_from(&[0.7, -0.3]));
        let loss = classification_loss_on_tape(
            &mut tape,
            l,
            &labels,
            ClassWeighting::PerClass {
                lambda: 1.0,
                mu: 0.0,
            },
        )
        .unwrap();
        assert_relative_eq!(
            tape.value(loss).item(),
            bce_value(0.7, true),
            epsilon = 1e-14
        );
        tape.backward(loss, 1.0).unwrap();
        let g = tape.grad(l).unwrap();
        assert_ne!(g.at(0, 0), 0.0);
        assert_eq!(g.at(1, 0), 0.0);
    }

    #[test]
    fn loss_kind_parsing() {
        assert_eq!(LossKind::parse("guided"), Some(LossKind::Guided));
        assert_eq!(LossKind::parse("ibce"), Some(LossKind::InstanceBalanced));
        assert_eq!(LossKind::parse("ce"), Some(LossKind::CrossEntropy));
        assert_eq!(LossKind::parse("focal"), None);
        assert_eq!(LossKind::parse("floss"), None);
        assert_eq!(LossKind::Guided.as_str(), "guided");
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        /// Non-degenerate configurations: every confusion category occupied
        /// and strictly informative category losses.
        fn valid_config() -> impl Strategy<Value = (PairCounts, CategoryLosses, f64)> {
            (
                2usize..200,
                2usize..1000,
                0.01f64..1.0,
                0.01f64..2.0,
                0.01f64..1.0,
                0.01f64..2.0,
                0.2f64..4.0,
            )
                .prop_flat_map(|(n_pos, n_neg, l_tp, d_fn, l_tn, d_fp, n)| {
                    (
                        Just(n_pos),
                        Just(n_neg),
                        1usize..n_pos,
                        1usize..n_neg,
                        Just(l_tp),
                        Just(d_fn),
                        Just(l_tn),
                        Just(d_fp),
                        Just(n),
                    )
                })
                .prop_map(|(n_pos, n_neg, x, y, l_tp, d_fn, l_tn, d_fp, n)| {
                    (
                        PairCounts { n_pos, n_neg, x, y },
                        CategoryLosses {
                            tp: Some(l_tp),
                            fn_: Some(l_tp + d_fn),
                            fp: Some(l_tn + d_fp),
                            tn: Some(l_tn),
                        },
                        n,
                    )
                })
        }

        proptest! {
            #[test]
            fn weights_always_sum_to_one_bitwise((counts, losses, n) in valid_config()) {
                let w = guided_weights(&counts, &losses, n);
                prop_assert_eq!((w.lambda + w.mu).to_bits(), 1.0f64.to_bits());
                prop_assert!(w.lambda > 0.0 && w.lambda < 1.0);
            }

            #[test]
            fn balance_residual_stays_small((counts, losses, n) in valid_config()) {
                let w = guided_weights(&counts, &losses, n);
                prop_assert!(!w.fallback);
                prop_assert!(w.balance_residual().unwrap() < 1e-9 * (1.0 + w.rho));
            }

            #[test]
            fn descent_and_f_measure_never_oppose(
                (counts, losses, n) in valid_config(),
                dx in -10i64..=10,
                dy in -10i64..=10,
            ) {
                let w = guided_weights(&counts, &losses, n);
                let dl = w.loss_delta(dx as f64, dy as f64);
                let df = w.f_delta(dx as f64, dy as f64);
                // Nonpositive product up to roundoff in the cancellation.
                prop_assert!(dl * df <= 1e-12 * dl.abs().max(1.0) * df.abs().max(1.0));
            }

            #[test]
            fn lambda_is_monotone_in_the_order((counts, losses, _n) in valid_config()) {
                let l1 = guided_weights(&counts, &losses, 0.5).lambda;
                let l2 = guided_weights(&counts, &losses, 1.0).lambda;
                let l3 = guided_weights(&counts, &losses, 2.0).lambda;
                prop_assert!(l1 < l2 && l2 < l3, "{} {} {}", l1, l2, l3);
            }

            #[test]
            fn f_measure_decreases_with_each_mistake((counts, _losses, n) in valid_config()) {
                let PairCounts { n_pos, n_neg: _, x, y } = counts;
                let f0 = f_measure_from_counts(n_pos, x, y, n);
                // Strictly decreasing in false negatives while TP > 0,
                // non-increasing in false positives.
                prop_assert!(f_measure_from_counts(n_pos, x + 1, y, n) < f0);
                prop_assert!(f_measure_from_counts(n_pos, x, y + 1, n) <= f0);
            }

            #[test]
            fn derivative_routes_agree_at_scale(
                n_pos in 1000usize..5000,
                n_neg in 1000usize..5000,
                x_frac in 0.01f64..0.9,
                y_frac in 0.01f64..0.9,
                n in prop::sample::select(vec![0.2, 0.5, 1.0, 2.0]),
            ) {
                // Counts big enough that the unit-step differences sit close
                // to the continuous derivatives.
                let x = ((n_pos as f64 * x_frac) as usize).clamp(10, n_pos - 10);
                let y = ((n_neg as f64 * y_frac) as usize).clamp(10, n_neg - 10);
                let counts = PairCounts { n_pos, n_neg, x, y };
                let part = analytic_partials(&counts, n).unwrap();
                let (dfx, dfy) = f_measure_forward_diffs(&counts, n);
                prop_assert!((part.df_dx() - dfx).abs() <= 0.05 * dfx.abs());
                prop_assert!((part.df_dy() - dfy).abs() <= 0.05 * dfy.abs());
            }

            #[test]
            fn residual_stays_tight_for_lopsided_ratios(
                n_pos in 2usize..10_000,
                gap_fn in 0.005f64..2.0,
                gap_fp in 0.005f64..2.0,
                n in prop::sample::select(vec![0.2, 0.5, 1.0, 2.0]),
            ) {
                // One surviving true positive and a tiny per-positive loss
                // slope push lambda within ulps of 1; the residual must
                // survive that regime.
                let counts = PairCounts { n_pos, n_neg: 2, x: n_pos - 1, y: 1 };
                let losses = CategoryLosses {
                    tp: Some(0.5),
                    fn_: Some(0.5 + gap_fn),
                    fp: Some(0.5 + gap_fp),
                    tn: Some(0.5),
                };
                let w = guided_weights(&counts, &losses, n);
                prop_assert!(!w.fallback);
                prop_assert_eq!((w.lambda + w.mu).to_bits(), 1.0f64.to_bits());
                prop_assert!(w.balance_residual().unwrap() < 1e-9);
            }
        }
    }
}
