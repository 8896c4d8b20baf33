use super::AdError;

/// Dense row-major rank-2 tensor of `f64`.
///
/// Everything the engine touches is a matrix: per-point features are
/// `[n_points, channels]`, per-channel statistics are `[1, channels]`,
/// per-point weights are `[n_points, 1]`, and scalars are `[1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds from a row-major buffer. Panics if the length does not match;
    /// this is a programming error, not a data error.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            rows * cols,
            data.len(),
            "tensor buffer length {} does not match shape {}x{}",
            data.len(),
            rows,
            cols
        );
        Tensor { rows, cols, data }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::from_vec(1, 1, vec![value])
    }

    /// Column vector `[n, 1]` from a slice.
    pub fn col_from(values: &[f64]) -> Self {
        Tensor::from_vec(values.len(), 1, values.to_vec())
    }

    /// Row vector `[1, n]` from a slice.
    pub fn row_from(values: &[f64]) -> Self {
        Tensor::from_vec(1, values.len(), values.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The single value of a `[1, 1]` tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on shape {:?}", self.shape());
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshaped(&self, rows: usize, cols: usize) -> Tensor {
        assert_eq!(rows * cols, self.numel(), "reshape changes element count");
        Tensor {
            rows,
            cols,
            data: self.data.clone(),
        }
    }

    pub fn transposed(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.at(r, c));
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise accumulate `self += other`, with `other` broadcast along
    /// singleton dimensions.
    pub fn add_assign_broadcast(&mut self, other: &Tensor) {
        assert!(broadcast_shape("add_assign", self.shape(), other.shape()).is_ok());
        for r in 0..self.rows {
            let or = if other.rows == 1 { 0 } else { r };
            for c in 0..self.cols {
                let oc = if other.cols == 1 { 0 } else { c };
                self.data[r * self.cols + c] += other.at(or, oc);
            }
        }
    }
}

/// Resulting shape of a broadcast binary op: dimensions must match or be 1.
pub(crate) fn broadcast_shape(
    op: &'static str,
    a: (usize, usize),
    b: (usize, usize),
) -> Result<(usize, usize), AdError> {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(AdError::ShapeMismatch { op, lhs: a, rhs: b }),
    }
}

/// Applies `f` elementwise over broadcast operands.
pub(crate) fn zip_broadcast(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, AdError> {
    let (rows, cols) = broadcast_shape(op, a.shape(), b.shape())?;
    let mut out = Tensor::zeros(rows, cols);
    for r in 0..rows {
        let ar = if a.rows == 1 { 0 } else { r };
        let br = if b.rows == 1 { 0 } else { r };
        for c in 0..cols {
            let ac = if a.cols == 1 { 0 } else { c };
            let bc = if b.cols == 1 { 0 } else { c };
            out.set(r, c, f(a.at(ar, ac), b.at(br, bc)));
        }
    }
    Ok(out)
}

/// Sums `grad` down to `shape` by collapsing the dimensions that were
/// broadcast during the forward op.
pub(crate) fn reduce_to_shape(grad: &Tensor, shape: (usize, usize)) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let mut out = Tensor::zeros(shape.0, shape.1);
    for r in 0..grad.rows() {
        let tr = if shape.0 == 1 { 0 } else { r };
        for c in 0..grad.cols() {
            let tc = if shape.1 == 1 { 0 } else { c };
            let v = out.at(tr, tc) + grad.at(r, c);
            out.set(tr, tc, v);
        }
    }
    out
}
