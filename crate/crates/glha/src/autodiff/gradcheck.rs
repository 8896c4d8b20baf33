use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Mode, NodeId, Tape};
use super::tensor::Tensor;
use super::AdError;

/// Outcome of a finite-difference gradient audit.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest relative error seen over all probed coordinates.
    pub max_rel_err: f64,
    /// Input label and flat coordinate where the maximum occurred.
    pub worst: Option<(String, usize)>,
    /// Number of coordinates probed.
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tol
    }
}

/// Compares reverse-mode gradients against central finite differences.
///
/// `f` builds a scalar output from leaves created in the order of `inputs`;
/// it must be a pure function of those values. For each input up to
/// `probes_per_input` coordinates are probed (all of them when the tensor is
/// small enough), re-evaluating `f` at `x ± h`. The relative error for one
/// coordinate is `|ad - fd| / max(|ad|, |fd|, 1e-6)`.
pub fn grad_check<F>(
    f: F,
    inputs: &[(&str, Tensor)],
    probes_per_input: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport, AdError>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId, AdError>,
{
    let evaluate = |tensors: &[Tensor]| -> Result<f64, AdError> {
        let mut tape = Tape::new(Mode::Train);
        let ids: Vec<NodeId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &ids)?;
        Ok(tape.value(out).item())
    };

    // Reverse-mode gradients at the base point.
    let base: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut tape = Tape::new(Mode::Train);
    let ids: Vec<NodeId> = base.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &ids)?;
    tape.backward(out, 1.0)?;
    let grads: Vec<Tensor> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, (_, t))| {
            tape.grad(id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };

    for (k, (label, tensor)) in inputs.iter().enumerate() {
        let n = tensor.numel();
        let coords: Vec<usize> = if n <= probes_per_input {
            (0..n).collect()
        } else {
            sample(&mut rng, n, probes_per_input).into_vec()
        };
        for c in coords {
            let mut up = base.clone();
            up[k].data_mut()[c] += h;
            let mut dn = base.clone();
            dn[k].data_mut()[c] -= h;
            let fd = (evaluate(&up)? - evaluate(&dn)?) / (2.0 * h);
            let ad = grads[k].data()[c];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-6);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((label.to_string(), c));
            }
        }
    }
    Ok(report)
}
