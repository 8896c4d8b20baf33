use super::eigen;
use super::tensor::{reduce_to_shape, zip_broadcast, Tensor};
use super::AdError;

/// Whether a tape runs in training or inference mode.
///
/// Training mode records everything needed for [`Tape::backward`] and is
/// where degenerate-spectrum checks fire. Inference mode never backpropagates
/// and uses row-order-independent kernels for every reduction over the point
/// axis, so permuting input rows permutes outputs bit-for-bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    GroupedLinear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        groups: usize,
    },
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Log(NodeId),
    Sqrt(NodeId),
    Clamp {
        x: NodeId,
        lo: f64,
        hi: f64,
    },
    ScaleShift {
        x: NodeId,
        scale: f64,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    ConcatCols(NodeId, NodeId),
    SoftmaxRows(NodeId),
    SumRows(NodeId),
    SumCols(NodeId),
    Reshape(NodeId),
    WeightedScatter {
        w: NodeId,
        xmat: NodeId,
    },
    SmallestEigvec {
        s: NodeId,
        aux: usize,
    },
}

#[derive(Clone, Debug)]
struct EigSaved {
    vals: Vec<f64>,
    /// Columns are eigenvectors, in the same (unsorted) order as `vals`.
    vecs: Tensor,
    min_idx: usize,
}

/// Record-and-replay reverse-mode differentiation tape over [`Tensor`]s.
///
/// Build a graph by pushing [`Tape::leaf`]/[`Tape::constant`] inputs and
/// applying ops; values are computed eagerly. [`Tape::backward`] then fills
/// gradients for every leaf that requires them.
pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    needs_grad: Vec<bool>,
    grads: Vec<Option<Tensor>>,
    eig_aux: Vec<EigSaved>,
    mode: Mode,
}

impl Tape {
    pub fn new(mode: Mode) -> Self {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
            needs_grad: Vec::new(),
            grads: Vec::new(),
            eig_aux: Vec::new(),
            mode,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    /// Gradient from the last [`Tape::backward`] call. Present only on leaf
    /// nodes that require gradients and were reached by the seed.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Differentiable input node.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input node.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.values.push(value);
        self.ops.push(op);
        self.needs_grad.push(needs_grad);
        NodeId(self.values.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.needs_grad[id.0]
    }

    // ---- per-point maps ----

    /// Per-point linear map: `[n, ci] x [ci, co] (+ [1, co]) -> [n, co]`.
    /// The same weights apply to every point (a 1x1 convolution over the
    /// point axis).
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId, AdError> {
        let (n, ci) = self.values[x.0].shape();
        let (wr, co) = self.values[w.0].shape();
        if ci != wr {
            return Err(AdError::ShapeMismatch {
                op: "linear",
                lhs: (n, ci),
                rhs: (wr, co),
            });
        }
        if let Some(bid) = b {
            if self.values[bid.0].shape() != (1, co) {
                return Err(AdError::ShapeMismatch {
                    op: "linear bias",
                    lhs: (1, co),
                    rhs: self.values[bid.0].shape(),
                });
            }
        }
        let mut out = Tensor::zeros(n, co);
        match self.mode {
            Mode::Train => dgemm_rowmajor(
                n,
                ci,
                co,
                self.values[x.0].data(),
                self.values[w.0].data(),
                out.data_mut(),
                false,
                false,
            ),
            // Inference uses a kernel whose arithmetic for row i depends only
            // on row i, so row permutations commute with the op bitwise.
            Mode::Eval => linear_rowwise(
                self.values[x.0].data(),
                self.values[w.0].data(),
                out.data_mut(),
                n,
                ci,
                co,
            ),
        }
        if let Some(bid) = b {
            let bias = &self.values[bid.0];
            for r in 0..n {
                for c in 0..co {
                    let v = out.at(r, c) + bias.at(0, c);
                    out.set(r, c, v);
                }
            }
        }
        let ng = self.needs(x) || self.needs(w) || b.map(|bb| self.needs(bb)).unwrap_or(false);
        Ok(self.push(out, Op::Linear { x, w, b }, ng))
    }

    /// Grouped per-point linear map. Input channels are split into `groups`
    /// contiguous blocks; rows `g*ci/groups..` of `w` map block `g` to
    /// `w.cols()` outputs, giving `groups * w.cols()` output channels.
    pub fn grouped_linear(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        groups: usize,
    ) -> Result<NodeId, AdError> {
        let (n, ci) = self.values[x.0].shape();
        let (wr, cog) = self.values[w.0].shape();
        if groups == 0 || ci % groups != 0 || wr != ci {
            return Err(AdError::InvalidOperand {
                op: "grouped_linear",
                detail: format!("input {ci} channels, weight rows {wr}, groups {groups}"),
            });
        }
        let cig = ci / groups;
        let co = groups * cog;
        if let Some(bid) = b {
            if self.values[bid.0].shape() != (1, co) {
                return Err(AdError::ShapeMismatch {
                    op: "grouped_linear bias",
                    lhs: (1, co),
                    rhs: self.values[bid.0].shape(),
                });
            }
        }
        let xs = &self.values[x.0];
        let ws = &self.values[w.0];
        let mut out = Tensor::zeros(n, co);
        for r in 0..n {
            for g in 0..groups {
                for oc in 0..cog {
                    let mut s = 0.0;
                    for k in 0..cig {
                        s += xs.at(r, g * cig + k) * ws.at(g * cig + k, oc);
                    }
                    out.set(r, g * cog + oc, s);
                }
            }
        }
        if let Some(bid) = b {
            let bias = &self.values[bid.0];
            for r in 0..n {
                for c in 0..co {
                    let v = out.at(r, c) + bias.at(0, c);
                    out.set(r, c, v);
                }
            }
        }
        let ng = self.needs(x) || self.needs(w) || b.map(|bb| self.needs(bb)).unwrap_or(false);
        Ok(self.push(out, Op::GroupedLinear { x, w, b, groups }, ng))
    }

    // ---- pointwise nonlinearities ----

    /// Rectifier; the derivative at exactly zero is zero.
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.values[x.0].map(|v| if v > 0.0 { v } else { 0.0 });
        let ng = self.needs(x);
        self.push(out, Op::Relu(x), ng)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.values[x.0].map(f64::tanh);
        let ng = self.needs(x);
        self.push(out, Op::Tanh(x), ng)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.values[x.0].map(|v| 1.0 / (1.0 + (-v).exp()));
        let ng = self.needs(x);
        self.push(out, Op::Sigmoid(x), ng)
    }

    /// Natural logarithm. Rejects non-positive inputs up front.
    pub fn log(&mut self, x: NodeId) -> Result<NodeId, AdError> {
        if self.values[x.0].data().iter().any(|&v| v <= 0.0) {
            return Err(AdError::NonFinite { op: "log" });
        }
        let out = self.values[x.0].map(f64::ln);
        let ng = self.needs(x);
        Ok(self.push(out, Op::Log(x), ng))
    }

    /// Square root. Rejects negative inputs; the derivative at exactly zero
    /// is pinned to zero instead of diverging.
    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId, AdError> {
        if self.values[x.0].data().iter().any(|&v| v < 0.0) {
            return Err(AdError::NonFinite { op: "sqrt" });
        }
        let out = self.values[x.0].map(f64::sqrt);
        let ng = self.needs(x);
        Ok(self.push(out, Op::Sqrt(x), ng))
    }

    /// Clamp to `[lo, hi]`; gradient passes only strictly inside the band.
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let out = self.values[x.0].map(|v| v.clamp(lo, hi));
        let ng = self.needs(x);
        self.push(out, Op::Clamp { x, lo, hi }, ng)
    }

    /// `y = scale * x + shift` with constant coefficients.
    pub fn scale_shift(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        let out = self.values[x.0].map(|v| scale * v + shift);
        let ng = self.needs(x);
        self.push(out, Op::ScaleShift { x, scale }, ng)
    }

    // ---- broadcast binary ops ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        let out = zip_broadcast("add", &self.values[a.0], &self.values[b.0], |x, y| x + y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        let out = zip_broadcast("sub", &self.values[a.0], &self.values[b.0], |x, y| x - y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        let out = zip_broadcast("mul", &self.values[a.0], &self.values[b.0], |x, y| x * y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// Elementwise division; rejects results that are not finite.
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        let out = zip_broadcast("div", &self.values[a.0], &self.values[b.0], |x, y| x / y)?;
        if !out.all_finite() {
            return Err(AdError::NonFinite { op: "div" });
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Div(a, b), ng))
    }

    // ---- structure ops ----

    /// Concatenate along the channel axis.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        let (ar, ac) = self.values[a.0].shape();
        let (br, bc) = self.values[b.0].shape();
        if ar != br {
            return Err(AdError::ShapeMismatch {
                op: "concat_cols",
                lhs: (ar, ac),
                rhs: (br, bc),
            });
        }
        let mut out = Tensor::zeros(ar, ac + bc);
        for r in 0..ar {
            for c in 0..ac {
                out.set(r, c, self.values[a.0].at(r, c));
            }
            for c in 0..bc {
                out.set(r, ac + c, self.values[b.0].at(r, c));
            }
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::ConcatCols(a, b), ng))
    }

    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId, AdError> {
        if rows * cols != self.values[x.0].numel() {
            return Err(AdError::InvalidOperand {
                op: "reshape",
                detail: format!(
                    "cannot view {:?} as {rows}x{cols}",
                    self.values[x.0].shape()
                ),
            });
        }
        let out = self.values[x.0].reshaped(rows, cols);
        let ng = self.needs(x);
        Ok(self.push(out, Op::Reshape(x), ng))
    }

    // ---- reductions over the point axis ----

    /// Softmax along rows (the point axis), independently per column.
    /// Output is strictly positive and each column sums to one.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId, AdError> {
        let (n, c) = self.values[x.0].shape();
        if n == 0 {
            return Err(AdError::InvalidOperand {
                op: "softmax_rows",
                detail: "empty point axis".into(),
            });
        }
        let mut out = Tensor::zeros(n, c);
        let mut scratch = Vec::with_capacity(n);
        for col in 0..c {
            let xs = &self.values[x.0];
            let mut mx = f64::NEG_INFINITY;
            for r in 0..n {
                mx = mx.max(xs.at(r, col));
            }
            scratch.clear();
            for r in 0..n {
                let e = (xs.at(r, col) - mx).exp();
                out.set(r, col, e);
                scratch.push(e);
            }
            let denom = self.reduce_sum(&mut scratch);
            for r in 0..n {
                let v = out.at(r, col) / denom;
                out.set(r, col, v);
            }
        }
        let ng = self.needs(x);
        Ok(self.push(out, Op::SoftmaxRows(x), ng))
    }

    /// Sum over rows: `[n, c] -> [1, c]`.
    pub fn sum_rows(&mut self, x: NodeId) -> Result<NodeId, AdError> {
        let (n, c) = self.values[x.0].shape();
        if n == 0 {
            return Err(AdError::InvalidOperand {
                op: "sum_rows",
                detail: "empty point axis".into(),
            });
        }
        let mut out = Tensor::zeros(1, c);
        let mut scratch = Vec::with_capacity(n);
        for col in 0..c {
            let xs = &self.values[x.0];
            scratch.clear();
            for r in 0..n {
                scratch.push(xs.at(r, col));
            }
            out.set(0, col, self.reduce_sum(&mut scratch));
        }
        let ng = self.needs(x);
        Ok(self.push(out, Op::SumRows(x), ng))
    }

    /// Sum over columns: `[n, c] -> [n, 1]`. A within-row reduction, so it is
    /// row-permutation equivariant in either mode.
    pub fn sum_cols(&mut self, x: NodeId) -> Result<NodeId, AdError> {
        let (n, c) = self.values[x.0].shape();
        if c == 0 {
            return Err(AdError::InvalidOperand {
                op: "sum_cols",
                detail: "empty channel axis".into(),
            });
        }
        let xs = &self.values[x.0];
        let mut out = Tensor::zeros(n, 1);
        for r in 0..n {
            out.set(r, 0, xs.row(r).iter().sum());
        }
        let ng = self.needs(x);
        Ok(self.push(out, Op::SumCols(x), ng))
    }

    /// Mean over rows: `[n, c] -> [1, c]`.
    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId, AdError> {
        let n = self.values[x.0].rows();
        let s = self.sum_rows(x)?;
        Ok(self.scale_shift(s, 1.0 / n as f64, 0.0))
    }

    /// Mean over columns: `[n, c] -> [n, 1]`.
    pub fn mean_cols(&mut self, x: NodeId) -> Result<NodeId, AdError> {
        let c = self.values[x.0].cols();
        let s = self.sum_cols(x)?;
        Ok(self.scale_shift(s, 1.0 / c as f64, 0.0))
    }

    /// Sum of every element: `-> [1, 1]`.
    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId, AdError> {
        let s = self.sum_rows(x)?;
        self.sum_cols(s)
    }

    /// Mean of every element: `-> [1, 1]`.
    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId, AdError> {
        let n = self.values[x.0].numel();
        let s = self.sum_all(x)?;
        Ok(self.scale_shift(s, 1.0 / n as f64, 0.0))
    }

    // In inference mode, reductions over the point axis accumulate in sorted
    // value order, which is invariant to row permutations of the input;
    // training mode keeps plain index order.
    fn reduce_sum(&self, buf: &mut [f64]) -> f64 {
        if self.mode == Mode::Eval {
            buf.sort_unstable_by(f64::total_cmp);
        }
        buf.iter().sum()
    }

    // ---- geometry-facing ops ----

    /// Weighted scatter matrix `S = sum_i w_i x_i x_i^T` of constant design
    /// rows `xmat` (`[n, k]`) under per-point weights `w` (`[n, 1]`).
    /// Gradients flow into `w` only; `xmat` must be a constant.
    pub fn weighted_scatter(&mut self, w: NodeId, xmat: NodeId) -> Result<NodeId, AdError> {
        let (n, wc) = self.values[w.0].shape();
        let (xn, k) = self.values[xmat.0].shape();
        if wc != 1 || xn != n {
            return Err(AdError::ShapeMismatch {
                op: "weighted_scatter",
                lhs: (n, wc),
                rhs: (xn, k),
            });
        }
        if self.needs(xmat) {
            return Err(AdError::InvalidOperand {
                op: "weighted_scatter",
                detail: "design rows must be constant".into(),
            });
        }
        let mut out = Tensor::zeros(k, k);
        match self.mode {
            Mode::Train => {
                let ws = &self.values[w.0];
                let xs = &self.values[xmat.0];
                for i in 0..n {
                    let wi = ws.at(i, 0);
                    let row = xs.row(i);
                    for j in 0..k {
                        let wj = wi * row[j];
                        for l in 0..k {
                            let v = out.at(j, l) + wj * row[l];
                            out.set(j, l, v);
                        }
                    }
                }
            }
            Mode::Eval => {
                let mut scratch = Vec::with_capacity(n);
                for j in 0..k {
                    for l in 0..k {
                        let ws = &self.values[w.0];
                        let xs = &self.values[xmat.0];
                        scratch.clear();
                        for i in 0..n {
                            scratch.push(ws.at(i, 0) * xs.at(i, j) * xs.at(i, l));
                        }
                        out.set(j, l, self.reduce_sum(&mut scratch));
                    }
                }
            }
        }
        let ng = self.needs(w);
        Ok(self.push(out, Op::WeightedScatter { w, xmat }, ng))
    }

    /// Unit eigenvector for the smallest eigenvalue of a symmetric matrix,
    /// sign-fixed so its largest-magnitude coordinate is positive. Returns a
    /// `[k, 1]` column.
    ///
    /// In training mode an eigengap below `gap_tol` is rejected as a
    /// degenerate spectrum, because the eigenvector derivative grows like
    /// the inverse gap. Inference does not differentiate and proceeds.
    pub fn smallest_eigvec(&mut self, s: NodeId, gap_tol: f64) -> Result<NodeId, AdError> {
        let (vals, vecs) = eigen::sym_eig(&self.values[s.0])?;
        let (min_idx, gap) = eigen::smallest_index_and_gap(&vals);
        if self.mode == Mode::Train && self.needs(s) && gap < gap_tol {
            return Err(AdError::DegenerateSpectrum { gap, tol: gap_tol });
        }
        let k = vals.len();
        let mut v: Vec<f64> = (0..k).map(|r| vecs.at(r, min_idx)).collect();
        eigen::fix_sign(&mut v);
        let aux = self.eig_aux.len();
        self.eig_aux.push(EigSaved {
            vals,
            vecs,
            min_idx,
        });
        let ng = self.needs(s);
        Ok(self.push(Tensor::col_from(&v), Op::SmallestEigvec { s, aux }, ng))
    }

    // ---- composed statistics ----

    /// Weighted per-channel moments over the point axis. `w` is `[n, 1]` and
    /// should sum to one; returns `(mean, std)` as `[1, c]` nodes where
    /// `std = sqrt(sum_i w_i (x_i - mean)^2 + eps)`.
    pub fn weighted_moments(
        &mut self,
        x: NodeId,
        w: NodeId,
        eps: f64,
    ) -> Result<(NodeId, NodeId), AdError> {
        let wx = self.mul(x, w)?;
        let mean = self.sum_rows(wx)?;
        let diff = self.sub(x, mean)?;
        let sq = self.mul(diff, diff)?;
        let wsq = self.mul(sq, w)?;
        let var = self.sum_rows(wsq)?;
        let shifted = self.scale_shift(var, 1.0, eps);
        let std = self.sqrt(shifted)?;
        Ok((mean, std))
    }

    /// Per-channel batch normalization over the point axis.
    ///
    /// Training mode normalizes with current batch statistics and returns
    /// them (mean, biased variance) so the caller can fold them into running
    /// statistics; inference mode normalizes with the provided running
    /// statistics and returns `None`.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &Tensor,
        running_var: &Tensor,
        eps: f64,
    ) -> Result<(NodeId, Option<(Tensor, Tensor)>), AdError> {
        let (_, c) = self.values[x.0].shape();
        if running_mean.shape() != (1, c) || running_var.shape() != (1, c) {
            return Err(AdError::ShapeMismatch {
                op: "batch_norm",
                lhs: (1, c),
                rhs: running_mean.shape(),
            });
        }
        let (xhat, batch) = match self.mode {
            Mode::Train => {
                let mean = self.mean_rows(x)?;
                let diff = self.sub(x, mean)?;
                let sq = self.mul(diff, diff)?;
                let var = self.mean_rows(sq)?;
                let shifted = self.scale_shift(var, 1.0, eps);
                let std = self.sqrt(shifted)?;
                let xhat = self.div(diff, std)?;
                let stats = (self.value(mean).clone(), self.value(var).clone());
                (xhat, Some(stats))
            }
            Mode::Eval => {
                let mean = self.constant(running_mean.clone());
                let std = self.constant(running_var.map(|v| (v + eps).sqrt()));
                let diff = self.sub(x, mean)?;
                let xhat = self.div(diff, std)?;
                (xhat, None)
            }
        };
        let scaled = self.mul(xhat, gamma)?;
        let y = self.add(scaled, beta)?;
        Ok((y, batch))
    }

    // ---- reverse pass ----

    /// Backpropagates `seed` from the scalar node `out`, filling gradients
    /// for every reachable leaf that requires them. Intermediate gradients
    /// are dropped as soon as they have been consumed.
    pub fn backward(&mut self, out: NodeId, seed: f64) -> Result<(), AdError> {
        let shape = self.values[out.0].shape();
        if shape != (1, 1) {
            return Err(AdError::NotScalar { shape });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.values.len()];
        grads[out.0] = Some(Tensor::scalar(seed));

        for i in (0..=out.0).rev() {
            if grads[i].is_none() || !self.needs_grad[i] {
                continue;
            }
            let g = grads[i].take().expect("grad present");
            let (head, _) = grads.split_at_mut(i);
            self.distribute(i, &g, head)?;
            if matches!(self.ops[i], Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn acc(&self, head: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
        if !self.needs_grad[id.0] {
            return;
        }
        match &mut head[id.0] {
            Some(t) => t.add_assign_broadcast(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    /// Pushes the output gradient `g` of node `i` into its inputs.
    fn distribute(&self, i: usize, g: &Tensor, head: &mut [Option<Tensor>]) -> Result<(), AdError> {
        match self.ops[i] {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (n, ci) = self.values[x.0].shape();
                let co = self.values[w.0].cols();
                if self.needs(x) {
                    let mut dx = Tensor::zeros(n, ci);
                    // dX = dY W^T
                    dgemm_rowmajor(
                        n,
                        co,
                        ci,
                        g.data(),
                        self.values[w.0].data(),
                        dx.data_mut(),
                        false,
                        true,
                    );
                    self.acc(head, x, dx);
                }
                if self.needs(w) {
                    let mut dw = Tensor::zeros(ci, co);
                    // dW = X^T dY
                    dgemm_rowmajor(
                        ci,
                        n,
                        co,
                        self.values[x.0].data(),
                        g.data(),
                        dw.data_mut(),
                        true,
                        false,
                    );
                    self.acc(head, w, dw);
                }
                if let Some(bid) = b {
                    if self.needs(bid) {
                        self.acc(head, bid, reduce_to_shape(g, (1, co)));
                    }
                }
            }
            Op::GroupedLinear { x, w, b, groups } => {
                let (n, ci) = self.values[x.0].shape();
                let cog = self.values[w.0].cols();
                let cig = ci / groups;
                if self.needs(x) {
                    let ws = &self.values[w.0];
                    let mut dx = Tensor::zeros(n, ci);
                    for r in 0..n {
                        for gi in 0..groups {
                            for k in 0..cig {
                                let mut s = 0.0;
                                for oc in 0..cog {
                                    s += g.at(r, gi * cog + oc) * ws.at(gi * cig + k, oc);
                                }
                                dx.set(r, gi * cig + k, s);
                            }
                        }
                    }
                    self.acc(head, x, dx);
                }
                if self.needs(w) {
                    let xs = &self.values[x.0];
                    let mut dw = Tensor::zeros(ci, cog);
                    for r in 0..n {
                        for gi in 0..groups {
                            for k in 0..cig {
                                let xv = xs.at(r, gi * cig + k);
                                for oc in 0..cog {
                                    let v = dw.at(gi * cig + k, oc) + xv * g.at(r, gi * cog + oc);
                                    dw.set(gi * cig + k, oc, v);
                                }
                            }
                        }
                    }
                    self.acc(head, w, dw);
                }
                if let Some(bid) = b {
                    if self.needs(bid) {
                        self.acc(head, bid, reduce_to_shape(g, (1, groups * cog)));
                    }
                }
            }
            Op::Relu(x) => {
                let dx = zip_broadcast("relu_bwd", g, &self.values[x.0], |gv, xv| {
                    if xv > 0.0 {
                        gv
                    } else {
                        0.0
                    }
                })?;
                self.acc(head, x, dx);
            }
            Op::Tanh(x) => {
                let dx = zip_broadcast("tanh_bwd", g, &self.values[i], |gv, y| {
                    gv * (1.0 - y * y)
                })?;
                self.acc(head, x, dx);
            }
            Op::Sigmoid(x) => {
                let dx = zip_broadcast("sigmoid_bwd", g, &self.values[i], |gv, y| {
                    gv * y * (1.0 - y)
                })?;
                self.acc(head, x, dx);
            }
            Op::Log(x) => {
                let dx = zip_broadcast("log_bwd", g, &self.values[x.0], |gv, xv| gv / xv)?;
                self.acc(head, x, dx);
            }
            Op::Sqrt(x) => {
                // d sqrt = g / (2 sqrt(x)), pinned to zero where the output
                // is exactly zero.
                let dx = zip_broadcast("sqrt_bwd", g, &self.values[i], |gv, y| {
                    if y == 0.0 {
                        0.0
                    } else {
                        gv * 0.5 / y
                    }
                })?;
                self.acc(head, x, dx);
            }
            Op::Clamp { x, lo, hi } => {
                let dx = zip_broadcast("clamp_bwd", g, &self.values[x.0], |gv, xv| {
                    if xv > lo && xv < hi {
                        gv
                    } else {
                        0.0
                    }
                })?;
                self.acc(head, x, dx);
            }
            Op::ScaleShift { x, scale } => {
                self.acc(head, x, g.map(|v| v * scale));
            }
            Op::Add(a, b) => {
                if self.needs(a) {
                    self.acc(head, a, reduce_to_shape(g, self.values[a.0].shape()));
                }
                if self.needs(b) {
                    self.acc(head, b, reduce_to_shape(g, self.values[b.0].shape()));
                }
            }
            Op::Sub(a, b) => {
                if self.needs(a) {
                    self.acc(head, a, reduce_to_shape(g, self.values[a.0].shape()));
                }
                if self.needs(b) {
                    let neg = g.map(|v| -v);
                    self.acc(head, b, reduce_to_shape(&neg, self.values[b.0].shape()));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let da = zip_broadcast("mul_bwd", g, &self.values[b.0], |gv, bv| gv * bv)?;
                    self.acc(head, a, reduce_to_shape(&da, self.values[a.0].shape()));
                }
                if self.needs(b) {
                    let db = zip_broadcast("mul_bwd", g, &self.values[a.0], |gv, av| gv * av)?;
                    self.acc(head, b, reduce_to_shape(&db, self.values[b.0].shape()));
                }
            }
            Op::Div(a, b) => {
                if self.needs(a) {
                    let da = zip_broadcast("div_bwd", g, &self.values[b.0], |gv, bv| gv / bv)?;
                    self.acc(head, a, reduce_to_shape(&da, self.values[a.0].shape()));
                }
                if self.needs(b) {
                    // d/db (a/b) = -a / b^2 = -out / b
                    let t = zip_broadcast("div_bwd", g, &self.values[i], |gv, ov| gv * ov)?;
                    let db = zip_broadcast("div_bwd", &t, &self.values[b.0], |tv, bv| -tv / bv)?;
                    self.acc(head, b, reduce_to_shape(&db, self.values[b.0].shape()));
                }
            }
            Op::ConcatCols(a, b) => {
                let (n, ac) = self.values[a.0].shape();
                let bc = self.values[b.0].cols();
                if self.needs(a) {
                    let mut da = Tensor::zeros(n, ac);
                    for r in 0..n {
                        for c in 0..ac {
                            da.set(r, c, g.at(r, c));
                        }
                    }
                    self.acc(head, a, da);
                }
                if self.needs(b) {
                    let mut db = Tensor::zeros(n, bc);
                    for r in 0..n {
                        for c in 0..bc {
                            db.set(r, c, g.at(r, ac + c));
                        }
                    }
                    self.acc(head, b, db);
                }
            }
            Op::SoftmaxRows(x) => {
                // dx = s * (g - <g, s>) column-wise, from the saved output.
                let s = &self.values[i];
                let (n, c) = s.shape();
                let mut dx = Tensor::zeros(n, c);
                for col in 0..c {
                    let mut dot = 0.0;
                    for r in 0..n {
                        dot += g.at(r, col) * s.at(r, col);
                    }
                    for r in 0..n {
                        dx.set(r, col, s.at(r, col) * (g.at(r, col) - dot));
                    }
                }
                self.acc(head, x, dx);
            }
            Op::SumRows(x) => {
                let (n, c) = self.values[x.0].shape();
                let mut dx = Tensor::zeros(n, c);
                for r in 0..n {
                    for col in 0..c {
                        dx.set(r, col, g.at(0, col));
                    }
                }
                self.acc(head, x, dx);
            }
            Op::SumCols(x) => {
                let (n, c) = self.values[x.0].shape();
                let mut dx = Tensor::zeros(n, c);
                for r in 0..n {
                    for col in 0..c {
                        dx.set(r, col, g.at(r, 0));
                    }
                }
                self.acc(head, x, dx);
            }
            Op::Reshape(x) => {
                let (r, c) = self.values[x.0].shape();
                self.acc(head, x, g.reshaped(r, c));
            }
            Op::WeightedScatter { w, xmat } => {
                if self.needs(w) {
                    let xs = &self.values[xmat.0];
                    let (n, k) = xs.shape();
                    let mut dw = Tensor::zeros(n, 1);
                    // dw_i = x_i^T G x_i
                    for row_i in 0..n {
                        let row = xs.row(row_i);
                        let mut s = 0.0;
                        for j in 0..k {
                            for l in 0..k {
                                s += g.at(j, l) * row[j] * row[l];
                            }
                        }
                        dw.set(row_i, 0, s);
                    }
                    self.acc(head, w, dw);
                }
            }
            Op::SmallestEigvec { s, aux } => {
                if self.needs(s) {
                    let saved = &self.eig_aux[aux];
                    let k = saved.vals.len();
                    let vout = &self.values[i];
                    let lam = saved.vals[saved.min_idx];
                    // First-order eigenvector perturbation:
                    //   K = sum_{j != min} (v_j . g) / (lam_min - lam_j) v_j
                    let mut kvec = vec![0.0f64; k];
                    for j in 0..k {
                        if j == saved.min_idx {
                            continue;
                        }
                        let mut dot = 0.0;
                        for r in 0..k {
                            dot += saved.vecs.at(r, j) * g.at(r, 0);
                        }
                        let coef = dot / (lam - saved.vals[j]);
                        for r in 0..k {
                            kvec[r] += coef * saved.vecs.at(r, j);
                        }
                    }
                    // dS = sym(K v^T); the forward input is symmetric by
                    // construction, so the symmetrized form distributes the
                    // sensitivity over both mirrored entries.
                    let mut ds = Tensor::zeros(k, k);
                    for r in 0..k {
                        for c in 0..k {
                            ds.set(
                                r,
                                c,
                                0.5 * (kvec[r] * vout.at(c, 0) + vout.at(r, 0) * kvec[c]),
                            );
                        }
                    }
                    self.acc(head, s, ds);
                }
            }
        }
        Ok(())
    }
}

/// Row-major `C += A (m x k) * B (k x n)`, with optional logical transposes
/// expressed through strides (`A` is then stored as `k x m`, etc.).
#[allow(clippy::too_many_arguments)]
fn dgemm_rowmajor(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    c: &mut [f64],
    trans_a: bool,
    trans_b: bool,
) {
    let (rsa, csa) = if trans_a {
        (1isize, m as isize)
    } else {
        (k as isize, 1isize)
    };
    let (rsb, csb) = if trans_b {
        (1isize, k as isize)
    } else {
        (n as isize, 1isize)
    };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Row-at-a-time linear kernel: the arithmetic producing output row `i`
/// touches only input row `i`, with a fixed contraction order.
fn linear_rowwise(x: &[f64], w: &[f64], out: &mut [f64], n: usize, ci: usize, co: usize) {
    for r in 0..n {
        let xrow = &x[r * ci..(r + 1) * ci];
        let orow = &mut out[r * co..(r + 1) * co];
        for (k, &xv) in xrow.iter().enumerate() {
            let wrow = &w[k * co..(k + 1) * co];
            for (o, &wv) in orow.iter_mut().zip(wrow.iter()) {
                *o += xv * wv;
            }
        }
    }
}
