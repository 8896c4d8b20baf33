use super::tensor::Tensor;
use super::AdError;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Returns `(eigenvalues, eigenvectors)` where column `j` of the returned
/// tensor is the unit eigenvector for `eigenvalues[j]`. Eigenvalues are not
/// sorted. The sweep order is fixed, so the result is deterministic for a
/// given input. Intended for small systems (the nine-dimensional scatter of
/// the eight-point solve); cost is O(n^3) per sweep.
pub fn sym_eig(a: &Tensor) -> Result<(Vec<f64>, Tensor), AdError> {
    let n = a.rows();
    if a.cols() != n || n == 0 {
        return Err(AdError::InvalidOperand {
            op: "sym_eig",
            detail: format!("expected non-empty square matrix, got {:?}", a.shape()),
        });
    }
    let scale = a.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for r in 0..n {
        for c in (r + 1)..n {
            if (a.at(r, c) - a.at(c, r)).abs() > 1e-9 * scale {
                return Err(AdError::InvalidOperand {
                    op: "sym_eig",
                    detail: format!("matrix is not symmetric at ({r},{c})"),
                });
            }
        }
    }

    // Work on an exactly symmetric copy so rotations preserve symmetry.
    let mut m = vec![0.0f64; n * n];
    for r in 0..n {
        for c in 0..n {
            m[r * n + c] = 0.5 * (a.at(r, c) + a.at(c, r));
        }
    }
    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let off = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for r in 0..n {
            for c in (r + 1)..n {
                s += m[r * n + c] * m[r * n + c];
            }
        }
        (2.0 * s).sqrt()
    };

    const MAX_SWEEPS: usize = 64;
    let tol = 1e-14 * scale.max(1e-300);
    for _ in 0..MAX_SWEEPS {
        if off(&m) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                // Stable rotation choice (Golub & Van Loan).
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let vals: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    Ok((vals, Tensor::from_vec(n, n, v)))
}

/// Smallest eigenpair of a symmetric matrix, plus the gap to the next
/// eigenvalue.
///
/// The eigenvector is unit length with a fixed sign convention: the
/// largest-magnitude coordinate (lowest index on ties) is positive. Returns
/// `(eigenvalue, eigenvector, gap)`.
pub fn smallest_eigpair(a: &Tensor) -> Result<(f64, Vec<f64>, f64), AdError> {
    let (vals, vecs) = sym_eig(a)?;
    let (min_idx, gap) = smallest_index_and_gap(&vals);
    let n = vals.len();
    let mut v: Vec<f64> = (0..n).map(|r| vecs.at(r, min_idx)).collect();
    fix_sign(&mut v);
    Ok((vals[min_idx], v, gap))
}

/// Index of the smallest eigenvalue (lowest index on exact ties) and the gap
/// to the second smallest.
pub(crate) fn smallest_index_and_gap(vals: &[f64]) -> (usize, f64) {
    let mut min_idx = 0;
    for (i, &v) in vals.iter().enumerate() {
        if v < vals[min_idx] {
            min_idx = i;
        }
    }
    let mut second = f64::INFINITY;
    for (i, &v) in vals.iter().enumerate() {
        if i != min_idx && v < second {
            second = v;
        }
    }
    let gap = if second.is_finite() {
        second - vals[min_idx]
    } else {
        f64::INFINITY
    };
    (min_idx, gap)
}

/// Flips `v` in place so its largest-magnitude coordinate (lowest index on
/// ties) is positive.
pub(crate) fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}
