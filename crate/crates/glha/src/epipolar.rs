//! Essential-matrix geometry for calibrated two-view correspondences.
//!
//! Everything works in normalized image coordinates (pixels premultiplied by
//! the inverse intrinsics), where the epipolar constraint for an inlier pair
//! is `p2^T E p1 = 0` with `E = [t]x R` defined up to scale and sign.
//!
//! Two solver routes are provided on purpose. [`fit_eight_point`] is a plain
//! numerical path used by sampling-based estimation, while
//! [`eight_point_on_tape`] builds the identical weighted least-squares solve
//! as differentiable tape ops so a network can be trained through the
//! solution. Tests hold the two routes against each other.

use nalgebra::{Matrix3, SMatrix, SymmetricEigen, Vector3};
use thiserror::Error;

use crate::autodiff::{AdError, NodeId, Tape, Tensor};

/// Residual threshold below which a correspondence counts as an inlier
/// (strict comparison), in squared normalized-coordinate units.
pub const INLIER_RESIDUAL_THRESHOLD: f64 = 1e-4;

/// Eigenvalue-gap floor for differentiating through the eight-point solve.
pub const EIGENGAP_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum EpipolarError {
    #[error("need at least {need} correspondences, got {got}")]
    InsufficientPoints { got: usize, need: usize },
    #[error("weights length {got} does not match correspondence count {expected}")]
    WeightMismatch { got: usize, expected: usize },
    #[error("degenerate configuration: null space is not one-dimensional (second eigenvalue {second:.3e})")]
    DegenerateConfiguration { second: f64 },
    #[error("cheirality test is ambiguous: best support {support} is not unique")]
    CheiralityAmbiguous { support: usize },
    #[error("translation is numerically zero; essential matrix undefined")]
    ZeroTranslation,
}

/// One correspondence in normalized image coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Correspondence {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Correspondence { x1, y1, x2, y2 }
    }

    /// Homogeneous point in the first view.
    pub fn p1(&self) -> Vector3<f64> {
        Vector3::new(self.x1, self.y1, 1.0)
    }

    /// Homogeneous point in the second view.
    pub fn p2(&self) -> Vector3<f64> {
        Vector3::new(self.x2, self.y2, 1.0)
    }
}

/// Estimated relative pose with its cheirality support.
#[derive(Clone, Debug)]
pub struct PoseEstimate {
    pub rotation: Matrix3<f64>,
    /// Unit-norm translation direction.
    pub translation: Vector3<f64>,
    /// Number of triangulated points in front of both cameras.
    pub support: usize,
}

/// Angular pose errors in degrees.
#[derive(Clone, Copy, Debug)]
pub struct PoseError {
    pub rot_deg: f64,
    pub trans_deg: f64,
}

impl PoseError {
    pub fn max(&self) -> f64 {
        self.rot_deg.max(self.trans_deg)
    }
}

/// `E = [t]x R`, scaled to unit Frobenius norm.
pub fn essential_from_rt(
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
) -> Result<Matrix3<f64>, EpipolarError> {
    let tx = Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0);
    let e = tx * r;
    let n = e.norm();
    if n < 1e-150 {
        return Err(EpipolarError::ZeroTranslation);
    }
    Ok(e / n)
}

/// Coefficient row such that `row . vec(E) = p2^T E p1`, where `vec` flattens
/// `E` row by row.
pub fn design_row(c: &Correspondence) -> [f64; 9] {
    [
        c.x2 * c.x1,
        c.x2 * c.y1,
        c.x2,
        c.y2 * c.x1,
        c.y2 * c.y1,
        c.y2,
        c.x1,
        c.y1,
        1.0,
    ]
}

/// Stacked design rows as an `[n, 9]` tensor for the differentiable route.
pub fn design_matrix(corrs: &[Correspondence]) -> Tensor {
    let mut data = Vec::with_capacity(corrs.len() * 9);
    for c in corrs {
        data.extend_from_slice(&design_row(c));
    }
    Tensor::from_vec(corrs.len(), 9, data)
}

/// Symmetric squared epipolar distance: the squared algebraic error divided
/// by the squared gradient in each image, summed. Returns infinity when a
/// point sits on an epipole.
pub fn epipolar_residual(e: &Matrix3<f64>, c: &Correspondence) -> f64 {
    let p1 = c.p1();
    let p2 = c.p2();
    let l2 = e * p1;
    let l1 = e.transpose() * p2;
    let num = p2.dot(&l2);
    let g2 = l2.x * l2.x + l2.y * l2.y;
    let g1 = l1.x * l1.x + l1.y * l1.y;
    if g1 < 1e-300 || g2 < 1e-300 {
        return f64::INFINITY;
    }
    num * num * (1.0 / g2 + 1.0 / g1)
}

/// Residual of every correspondence against `e`.
pub fn residuals(e: &Matrix3<f64>, corrs: &[Correspondence]) -> Vec<f64> {
    corrs.iter().map(|c| epipolar_residual(e, c)).collect()
}

/// Geometric inlier labels: residual strictly below
/// [`INLIER_RESIDUAL_THRESHOLD`].
pub fn label_inliers(e: &Matrix3<f64>, corrs: &[Correspondence]) -> Vec<bool> {
    corrs
        .iter()
        .map(|c| epipolar_residual(e, c) < INLIER_RESIDUAL_THRESHOLD)
        .collect()
}

/// Weighted eight-point solve: the unit vector minimizing
/// `sum_i w_i (x_i . vec(E))^2`, i.e. the smallest eigenvector of the
/// weighted scatter matrix. Weights default to one; they only need to be
/// nonnegative (scale cancels). The result is *not* projected onto the
/// essential manifold; see [`project_to_essential`].
pub fn fit_eight_point(
    corrs: &[Correspondence],
    weights: Option<&[f64]>,
) -> Result<Matrix3<f64>, EpipolarError> {
    let n = corrs.len();
    if n < 8 {
        return Err(EpipolarError::InsufficientPoints { got: n, need: 8 });
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(EpipolarError::WeightMismatch {
                got: w.len(),
                expected: n,
            });
        }
    }
    let mut s = SMatrix::<f64, 9, 9>::zeros();
    for (i, c) in corrs.iter().enumerate() {
        let w = weights.map(|w| w[i]).unwrap_or(1.0);
        if w == 0.0 {
            continue;
        }
        let row = design_row(c);
        for j in 0..9 {
            let wj = w * row[j];
            for k in 0..9 {
                s[(j, k)] += wj * row[k];
            }
        }
    }
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (lo, second) = (order[0], order[1]);
    let trace: f64 = eig.eigenvalues.iter().sum();
    if eig.eigenvalues[second] < 1e-12 * trace.max(1.0) {
        return Err(EpipolarError::DegenerateConfiguration {
            second: eig.eigenvalues[second],
        });
    }
    let v = eig.eigenvectors.column(lo);
    let mut e = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
    e /= e.norm();
    Ok(e)
}

/// Nearest essential matrix in Frobenius norm, normalized to unit scale:
/// singular values are replaced by `(1, 1, 0) / sqrt(2)`.
pub fn project_to_essential(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("left singular vectors");
    let v_t = svd.v_t.expect("right singular vectors");
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let sigma = Matrix3::new(s, 0.0, 0.0, 0.0, s, 0.0, 0.0, 0.0, 0.0);
    u * sigma * v_t
}

/// The four rotation/translation candidates of an essential matrix.
pub fn decompose_essential(e: &Matrix3<f64>) -> [(Matrix3<f64>, Vector3<f64>); 4] {
    let svd = e.svd(true, true);
    let u = svd.u.expect("left singular vectors");
    let v_t = svd.v_t.expect("right singular vectors");
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let mut ra = u * w * v_t;
    let mut rb = u * w.transpose() * v_t;
    // E is defined up to sign, so a reflected factorization may be negated
    // wholesale to land back on a proper rotation.
    if ra.determinant() < 0.0 {
        ra = -ra;
    }
    if rb.determinant() < 0.0 {
        rb = -rb;
    }
    let mut t = Vector3::new(u[(0, 2)], u[(1, 2)], u[(2, 2)]);
    let n = t.norm();
    if n > 0.0 {
        t /= n;
    }
    [(ra, t), (ra, -t), (rb, t), (rb, -t)]
}

/// Midpoint triangulation of one correspondence under pose `(r, t)` mapping
/// view-1 coordinates to view-2. Returns the point's depth in each camera,
/// or `None` for numerically parallel rays.
pub fn triangulate_depths(
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    c: &Correspondence,
) -> Option<(f64, f64)> {
    let c2 = -(r.transpose() * t);
    let d1 = c.p1();
    let d2 = r.transpose() * c.p2();
    let a = d1.dot(&d1);
    let b = d1.dot(&d2);
    let d = d2.dot(&d2);
    let c1 = c2.dot(&d1);
    let cc2 = c2.dot(&d2);
    let det = b * b - a * d;
    if det.abs() < 1e-12 * a * d {
        return None;
    }
    let s = (-d * c1 + b * cc2) / det;
    let u = (-b * c1 + a * cc2) / det;
    let x = 0.5 * ((s * d1) + c2 + (u * d2));
    let depth1 = x.z;
    let depth2 = (r * x + t).z;
    Some((depth1, depth2))
}

/// Picks the unique pose among the four essential-matrix candidates that
/// places the most triangulated correspondences in front of both cameras.
/// A tie for the best support (including zero support everywhere) is
/// reported as ambiguous rather than silently resolved.
pub fn recover_pose(
    e: &Matrix3<f64>,
    corrs: &[Correspondence],
) -> Result<PoseEstimate, EpipolarError> {
    let candidates = decompose_essential(e);
    let mut counts = [0usize; 4];
    for (k, (r, t)) in candidates.iter().enumerate() {
        counts[k] = corrs
            .iter()
            .filter_map(|c| triangulate_depths(r, t, c))
            .filter(|&(z1, z2)| z1 > 0.0 && z2 > 0.0)
            .count();
    }
    let best = (0..4).max_by_key(|&k| counts[k]).expect("four candidates");
    let best_count = counts[best];
    let runner_up = (0..4)
        .filter(|&k| k != best)
        .map(|k| counts[k])
        .max()
        .expect("three others");
    if best_count == 0 || best_count == runner_up {
        return Err(EpipolarError::CheiralityAmbiguous {
            support: best_count,
        });
    }
    let (rotation, translation) = candidates[best];
    Ok(PoseEstimate {
        rotation,
        translation,
        support: best_count,
    })
}

/// Angular distance between two poses: rotation angle of `R_est^T R_gt` and
/// the unsigned angle between translation directions (sign-blind, since the
/// essential matrix cannot observe the sign of `t`).
pub fn pose_error(
    r_est: &Matrix3<f64>,
    t_est: &Vector3<f64>,
    r_gt: &Matrix3<f64>,
    t_gt: &Vector3<f64>,
) -> PoseError {
    let cos_rot = (((r_est.transpose() * r_gt).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let ne = t_est.norm();
    let ng = t_gt.norm();
    let cos_trans = if ne < 1e-300 || ng < 1e-300 {
        0.0
    } else {
        (t_est.dot(t_gt).abs() / (ne * ng)).clamp(-1.0, 1.0)
    };
    PoseError {
        rot_deg: cos_rot.acos().to_degrees(),
        trans_deg: cos_trans.acos().to_degrees(),
    }
}

/// Mean average precision of angular errors over integer thresholds
/// `1..=tau` degrees: the average, over thresholds, of the fraction of
/// errors strictly below each threshold.
pub fn map_at(errors_deg: &[f64], tau_deg: usize) -> f64 {
    if errors_deg.is_empty() || tau_deg == 0 {
        return 0.0;
    }
    let n = errors_deg.len() as f64;
    let mut acc = 0.0;
    for t in 1..=tau_deg {
        let hit = errors_deg.iter().filter(|&&e| e < t as f64).count();
        acc += hit as f64 / n;
    }
    acc / tau_deg as f64
}

// ---- differentiable route ----

/// Weighted eight-point solve as tape operations: builds the weighted
/// scatter matrix of the (constant) design rows and extracts its smallest
/// eigenvector as a `[9, 1]` unit column, differentiable in the weights.
///
/// `design` must come from [`design_matrix`] registered as a tape constant.
pub fn eight_point_on_tape(
    tape: &mut Tape,
    weights: NodeId,
    design: NodeId,
    gap_tol: f64,
) -> Result<NodeId, AdError> {
    let scatter = tape.weighted_scatter(weights, design)?;
    tape.smallest_eigvec(scatter, gap_tol)
}

/// Sign-blind distance between a unit `[9, 1]` solution vector on the tape
/// and a ground-truth essential matrix:
/// `min(|e_hat - e|, |e_hat + e|)` with `e` scaled to unit Frobenius norm.
/// The branch is chosen from forward values and treated as constant.
pub fn regression_loss_on_tape(
    tape: &mut Tape,
    e_hat: NodeId,
    e_gt: &Matrix3<f64>,
) -> Result<NodeId, AdError> {
    let norm = e_gt.norm();
    let g: Vec<f64> = e_gt.transpose().iter().map(|v| v / norm).collect();
    debug_assert_eq!(g.len(), 9);
    let v = tape.value(e_hat);
    let mut d_minus = 0.0;
    let mut d_plus = 0.0;
    for i in 0..9 {
        let vi = v.at(i, 0);
        d_minus += (vi - g[i]) * (vi - g[i]);
        d_plus += (vi + g[i]) * (vi + g[i]);
    }
    let target = if d_minus <= d_plus {
        Tensor::col_from(&g)
    } else {
        Tensor::col_from(&g.iter().map(|v| -v).collect::<Vec<_>>())
    };
    let t = tape.constant(target);
    let diff = tape.sub(e_hat, t)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum_all(sq)?;
    tape.sqrt(total)
}

/// Reshapes a `[9, 1]` solution vector into the 3x3 matrix it flattens
/// (row-major), for handing to the plain geometric routines.
pub fn essential_from_vec9(v: &Tensor) -> Matrix3<f64> {
    assert_eq!(v.numel(), 9, "expected 9 coefficients");
    let d = v.data();
    Matrix3::new(d[0], d[1], d[2], d[3], d[4], d[5], d[6], d[7], d[8])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Mode};
    use approx::assert_relative_eq;
    use nalgebra::{Rotation3, Unit};

    /// Deterministic synthetic rig: a mild rotation plus sideways motion
    /// observing a cloud of points a few units in front of both cameras.
    fn sample_scene(n: usize) -> (Matrix3<f64>, Vector3<f64>, Vec<Correspondence>) {
        let axis = Unit::new_normalize(Vector3::new(0.2, 1.0, -0.3));
        let r = Rotation3::from_axis_angle(&axis, 0.08).into_inner();
        let t = Vector3::new(0.6, -0.15, 0.2).normalize() * 0.35;

        let mut state = 0x2545f4914f6cdd1du64;
        let mut unit = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut corrs = Vec::with_capacity(n);
        while corrs.len() < n {
            let z = 3.0 + 4.0 * unit();
            let x = (unit() - 0.5) * 0.8 * z;
            let y = (unit() - 0.5) * 0.8 * z;
            let p = Vector3::new(x, y, z);
            let q = r * p + t;
            if q.z <= 0.5 {
                continue;
            }
            corrs.push(Correspondence::new(x / z, y / z, q.x / q.z, q.y / q.z));
        }
        (r, t, corrs)
    }

    #[test]
    fn essential_matrix_annihilates_true_correspondences() {
        let (r, t, corrs) = sample_scene(30);
        let e = essential_from_rt(&r, &t).unwrap();
        assert_relative_eq!(e.norm(), 1.0, epsilon = 1e-12);
        for c in &corrs {
            let alg = c.p2().dot(&(e * c.p1()));
            assert!(alg.abs() < 1e-12, "algebraic error {alg}");
        }
    }

    #[test]
    fn design_row_reproduces_the_algebraic_error() {
        let (r, t, corrs) = sample_scene(5);
        // Deliberately non-essential matrix to exercise general coefficients.
        let m = r + Matrix3::new(0.1, 0.0, 0.2, 0.0, -0.3, 0.0, 0.05, 0.0, 1.0);
        let _ = t;
        for c in &corrs {
            let row = design_row(c);
            let flat: Vec<f64> = m.transpose().iter().copied().collect();
            let via_row: f64 = row.iter().zip(&flat).map(|(a, b)| a * b).sum();
            let direct = c.p2().dot(&(m * c.p1()));
            assert_relative_eq!(via_row, direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn clean_points_label_as_inliers_and_perturbed_ones_do_not() {
        let (r, t, mut corrs) = sample_scene(40);
        let e = essential_from_rt(&r, &t).unwrap();
        let labels = label_inliers(&e, &corrs);
        assert!(labels.iter().all(|&b| b));
        for c in corrs.iter_mut().take(10) {
            c.y2 += 0.05;
        }
        let labels = label_inliers(&e, &corrs);
        assert!(labels.iter().take(10).all(|&b| !b));
        assert!(labels.iter().skip(10).all(|&b| b));
    }

    #[test]
    fn eight_point_recovers_the_essential_matrix() {
        let (r, t, corrs) = sample_scene(24);
        let e_gt = essential_from_rt(&r, &t).unwrap();
        let e_fit = fit_eight_point(&corrs, None).unwrap();
        let dot: f64 = e_gt
            .iter()
            .zip(e_fit.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            .abs();
        assert!(dot > 1.0 - 1e-9, "|<E_gt, E_fit>| = {dot}");
    }

    #[test]
    fn eight_point_requires_eight_points() {
        let (_, _, corrs) = sample_scene(7);
        assert!(matches!(
            fit_eight_point(&corrs, None),
            Err(EpipolarError::InsufficientPoints { got: 7, need: 8 })
        ));
    }

    #[test]
    fn repeated_point_is_a_degenerate_configuration() {
        let c = Correspondence::new(0.1, -0.2, 0.12, -0.18);
        let corrs = vec![c; 12];
        assert!(matches!(
            fit_eight_point(&corrs, None),
            Err(EpipolarError::DegenerateConfiguration { .. })
        ));
    }

    #[test]
    fn zero_weights_reduce_to_the_unweighted_subset() {
        let (_, _, corrs) = sample_scene(30);
        let mut weights = vec![1.0; 30];
        for w in weights.iter_mut().skip(20) {
            *w = 0.0;
        }
        let masked = fit_eight_point(&corrs, Some(&weights)).unwrap();
        let subset = fit_eight_point(&corrs[..20], None).unwrap();
        let dot: f64 = masked
            .iter()
            .zip(subset.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            .abs();
        assert!(dot > 1.0 - 1e-12);
    }

    #[test]
    fn projection_lands_on_the_essential_manifold() {
        let m = Matrix3::new(1.0, 0.2, -0.3, 0.0, 2.0, 0.4, 0.5, -0.1, 0.7);
        let e = project_to_essential(&m);
        let svd = e.svd(false, false);
        let s = svd.singular_values;
        assert_relative_eq!(s[0], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        assert_relative_eq!(s[1], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        assert_relative_eq!(s[2], 0.0, epsilon = 1e-12);
        assert_relative_eq!(e.norm(), 1.0, epsilon = 1e-12);

        let (r, t, _) = sample_scene(1);
        let e_true = essential_from_rt(&r, &t).unwrap();
        let reprojected = project_to_essential(&e_true);
        let dot: f64 = e_true
            .iter()
            .zip(reprojected.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            .abs();
        assert!(dot > 1.0 - 1e-12, "projection should fix essential matrices");
    }

    #[test]
    fn pose_recovery_round_trip() {
        let (r, t, corrs) = sample_scene(40);
        let e_fit = project_to_essential(&fit_eight_point(&corrs, None).unwrap());
        let pose = recover_pose(&e_fit, &corrs).unwrap();
        assert_eq!(pose.support, 40);
        let err = pose_error(&pose.rotation, &pose.translation, &r, &t);
        assert!(err.rot_deg < 1e-4, "rotation error {}", err.rot_deg);
        assert!(err.trans_deg < 1e-4, "translation error {}", err.trans_deg);
    }

    #[test]
    fn cheirality_is_ambiguous_without_points() {
        let (r, t, _) = sample_scene(1);
        let e = essential_from_rt(&r, &t).unwrap();
        assert!(matches!(
            recover_pose(&e, &[]),
            Err(EpipolarError::CheiralityAmbiguous { support: 0 })
        ));
    }

    #[test]
    fn pose_error_basics() {
        let r = Matrix3::identity();
        let t = Vector3::new(1.0, 0.0, 0.0);
        let e = pose_error(&r, &t, &r, &t);
        assert_relative_eq!(e.rot_deg, 0.0, epsilon = 1e-9);
        assert_relative_eq!(e.trans_deg, 0.0, epsilon = 1e-9);

        // Sign of the translation cannot be observed.
        let e = pose_error(&r, &(-t), &r, &t);
        assert_relative_eq!(e.trans_deg, 0.0, epsilon = 1e-9);

        let r10 = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::z()), 10f64.to_radians())
            .into_inner();
        let e = pose_error(&r10, &t, &r, &t);
        assert_relative_eq!(e.rot_deg, 10.0, epsilon = 1e-9);

        let t90 = Vector3::new(0.0, 1.0, 0.0);
        let e = pose_error(&r, &t90, &r, &t);
        assert_relative_eq!(e.trans_deg, 90.0, epsilon = 1e-9);
    }

    #[test]
    fn map_at_matches_hand_computation() {
        let v = map_at(&[2.0, 4.0, 7.0], 5);
        assert_relative_eq!(v, 4.0 / 15.0, epsilon = 1e-15);
        // Thresholds are strict: an error of exactly 1 degree misses tau=1.
        assert_relative_eq!(map_at(&[1.0], 1), 0.0);
        assert_relative_eq!(map_at(&[0.5], 1), 1.0);
        assert_relative_eq!(map_at(&[], 5), 0.0);
    }

    #[test]
    fn tape_route_matches_the_plain_route() {
        let (_, _, corrs) = sample_scene(20);
        let weights: Vec<f64> = (0..20).map(|i| 0.3 + 0.05 * i as f64).collect();
        let plain = fit_eight_point(&corrs, Some(&weights)).unwrap();

        let mut tape = Tape::new(Mode::Train);
        let w = tape.leaf(Tensor::col_from(&weights));
        let x = tape.constant(design_matrix(&corrs));
        let v = eight_point_on_tape(&mut tape, w, x, EIGENGAP_TOLERANCE).unwrap();
        let e_tape = essential_from_vec9(tape.value(v));

        let dot: f64 = plain
            .iter()
            .zip(e_tape.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            .abs();
        assert!(dot > 1.0 - 1e-9, "routes disagree: |dot| = {dot}");
    }

    #[test]
    fn regression_loss_is_sign_blind_and_sqrt2_when_orthogonal() {
        let (r, t, corrs) = sample_scene(16);
        let e_gt = essential_from_rt(&r, &t).unwrap();

        let loss_for = |target: &Matrix3<f64>| -> f64 {
            let mut tape = Tape::new(Mode::Train);
            let w = tape.leaf(Tensor::filled(16, 1, 1.0));
            let x = tape.constant(design_matrix(&corrs));
            let v = eight_point_on_tape(&mut tape, w, x, EIGENGAP_TOLERANCE).unwrap();
            let l = regression_loss_on_tape(&mut tape, v, target).unwrap();
            tape.value(l).item()
        };
        let l_pos = loss_for(&e_gt);
        let l_neg = loss_for(&(-e_gt));
        assert_relative_eq!(l_pos, l_neg, epsilon = 1e-12);
        assert!(l_pos < 1e-6, "near-perfect fit should have tiny loss");

        // An orthogonal unit target sits at distance sqrt(2) either way.
        let mut tape = Tape::new(Mode::Train);
        let ortho = tape.leaf(Tensor::col_from(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
        let target = Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let l = regression_loss_on_tape(&mut tape, ortho, &target).unwrap();
        assert_relative_eq!(tape.value(l).item(), std::f64::consts::SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn solve_gradient_matches_finite_differences() {
        let (r, t, mut corrs) = sample_scene(12);
        let e_gt = essential_from_rt(&r, &t).unwrap();
        // Noise matters here: with exact correspondences the ground-truth
        // vector lies in the null space for *any* weights, the solve stops
        // depending on them, and both gradient routes measure pure noise.
        let mut state = 0xabcdef0123456789u64;
        let mut unit = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for c in corrs.iter_mut() {
            c.x2 += (unit() - 0.5) * 1e-2;
            c.y2 += (unit() - 0.5) * 1e-2;
        }
        let design = design_matrix(&corrs);
        // Uneven weights so the solve sits away from its optimum and the
        // gradient is well excited.
        let w0: Vec<f64> = (0..12).map(|i| 0.5 + 0.12 * (i % 5) as f64).collect();

        let report = grad_check(
            |tape, ids| {
                let x = tape.constant(design.clone());
                let v = eight_point_on_tape(tape, ids[0], x, 1e-10)?;
                regression_loss_on_tape(tape, v, &e_gt)
            },
            &[("weights", Tensor::col_from(&w0))],
            12,
            // Large enough that the eigensolver's convergence floor is not
            // amplified by the central difference; small enough to bound
            // truncation. Verified well inside the FD convergence plateau.
            1e-4,
            3,
        )
        .unwrap();
        assert_eq!(report.checked, 12);
        assert!(
            report.passes(1e-4),
            "max rel err {} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }
}
