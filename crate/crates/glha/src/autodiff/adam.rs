use std::collections::HashMap;

use super::params::ParameterStore;
use super::tensor::Tensor;
use super::AdError;

/// Adam optimizer with bias-corrected first and second moments.
///
/// Moments and step counts are tracked per parameter name. A parameter whose
/// gradient is absent from a step is treated as having a zero gradient: its
/// moments decay, its step count still advances, and the (possibly nonzero)
/// momentum tail is applied.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: HashMap<String, Tensor>,
    v: HashMap<String, Tensor>,
    steps: HashMap<String, u64>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: HashMap::new(),
            v: HashMap::new(),
            steps: HashMap::new(),
        }
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            m: HashMap::new(),
            v: HashMap::new(),
            steps: HashMap::new(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Steps taken so far for a parameter (0 if it has never been stepped).
    pub fn step_count(&self, name: &str) -> u64 {
        self.steps.get(name).copied().unwrap_or(0)
    }

    /// Restores a step count from a snapshot. Moments are not restored; they
    /// rebuild from zero while bias correction continues from `t`.
    pub fn restore_step_count(&mut self, name: &str, t: u64) {
        if t > 0 {
            self.steps.insert(name.to_string(), t);
        }
    }

    /// Applies one update to every trainable parameter in the store.
    ///
    /// Rejects a gradient that is non-finite or whose shape disagrees with
    /// its parameter before touching any state.
    pub fn step(
        &mut self,
        params: &mut ParameterStore,
        grads: &HashMap<String, Tensor>,
    ) -> Result<(), AdError> {
        for entry in params.iter() {
            if !entry.trainable {
                continue;
            }
            if let Some(g) = grads.get(&entry.name) {
                if g.shape() != entry.value.shape() {
                    return Err(AdError::InvalidOperand {
                        op: "adam",
                        detail: format!(
                            "gradient shape {:?} for parameter '{}' of shape {:?}",
                            g.shape(),
                            entry.name,
                            entry.value.shape()
                        ),
                    });
                }
                if !g.all_finite() {
                    return Err(AdError::NonFiniteGradient {
                        name: entry.name.clone(),
                    });
                }
            }
        }

        for entry in params.iter_mut() {
            if !entry.trainable {
                continue;
            }
            let n = entry.value.numel();
            let (rows, cols) = entry.value.shape();
            let m = self
                .m
                .entry(entry.name.clone())
                .or_insert_with(|| Tensor::zeros(rows, cols));
            let v = self
                .v
                .entry(entry.name.clone())
                .or_insert_with(|| Tensor::zeros(rows, cols));
            let t = self.steps.entry(entry.name.clone()).or_insert(0);
            *t += 1;
            let bc1 = 1.0 - self.beta1.powi(*t as i32);
            let bc2 = 1.0 - self.beta2.powi(*t as i32);

            let grad = grads.get(&entry.name);
            let md = m.data_mut();
            let vd = v.data_mut();
            let pd = entry.value.data_mut();
            for i in 0..n {
                let gi = grad.map(|g| g.data()[i]).unwrap_or(0.0);
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gi;
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn store_with(name: &str, vals: &[f64]) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.register(name, Tensor::row_from(vals));
        s
    }

    #[test]
    fn first_step_moves_by_roughly_the_learning_rate() {
        let mut params = store_with("w", &[1.0]);
        let mut opt = Adam::new(1e-3);
        let mut grads = HashMap::new();
        grads.insert("w".to_string(), Tensor::row_from(&[0.37]));
        opt.step(&mut params, &grads).unwrap();
        let w = params.get("w").unwrap().data()[0];
        // Bias correction makes the first update lr * g/|g| regardless of
        // gradient magnitude (up to eps).
        assert_relative_eq!(1.0 - w, 1e-3, max_relative = 1e-4);
        assert_eq!(opt.step_count("w"), 1);
    }

    #[test]
    fn absent_gradient_still_advances_the_step() {
        let mut params = store_with("w", &[1.0]);
        let mut opt = Adam::new(1e-3);
        let grads = HashMap::new();
        opt.step(&mut params, &grads).unwrap();
        // Zero gradient with zero moments leaves the value untouched.
        assert_eq!(params.get("w").unwrap().data()[0], 1.0);
        assert_eq!(opt.step_count("w"), 1);
    }

    #[test]
    fn momentum_tail_continues_after_gradient_vanishes() {
        let mut params = store_with("w", &[1.0]);
        let mut opt = Adam::new(1e-3);
        let mut grads = HashMap::new();
        grads.insert("w".to_string(), Tensor::row_from(&[1.0]));
        opt.step(&mut params, &grads).unwrap();
        let after_first = params.get("w").unwrap().data()[0];
        opt.step(&mut params, &HashMap::new()).unwrap();
        let after_second = params.get("w").unwrap().data()[0];
        assert!(after_second < after_first, "first-moment tail keeps moving");
        assert_eq!(opt.step_count("w"), 2);
    }

    #[test]
    fn non_finite_gradient_is_rejected_by_name() {
        let mut params = store_with("w", &[1.0]);
        let mut opt = Adam::new(1e-3);
        let mut grads = HashMap::new();
        grads.insert("w".to_string(), Tensor::row_from(&[f64::NAN]));
        match opt.step(&mut params, &grads) {
            Err(AdError::NonFiniteGradient { name }) => assert_eq!(name, "w"),
            other => panic!("expected NonFiniteGradient, got {other:?}"),
        }
        // State untouched by the failed step.
        assert_eq!(params.get("w").unwrap().data()[0], 1.0);
        assert_eq!(opt.step_count("w"), 0);
    }

    #[test]
    fn buffers_are_never_updated() {
        let mut params = ParameterStore::new();
        params.register_buffer("running", Tensor::row_from(&[5.0]));
        let mut opt = Adam::new(1.0);
        let mut grads = HashMap::new();
        grads.insert("running".to_string(), Tensor::row_from(&[100.0]));
        opt.step(&mut params, &grads).unwrap();
        assert_eq!(params.get("running").unwrap().data()[0], 5.0);
        assert_eq!(opt.step_count("running"), 0);
    }

    #[test]
    fn descends_a_quadratic() {
        let mut params = store_with("w", &[3.0]);
        let mut opt = Adam::new(0.05);
        for _ in 0..400 {
            let w = params.get("w").unwrap().data()[0];
            let mut grads = HashMap::new();
            grads.insert("w".to_string(), Tensor::row_from(&[2.0 * w]));
            opt.step(&mut params, &grads).unwrap();
        }
        assert!(params.get("w").unwrap().data()[0].abs() < 1e-2);
    }
}
