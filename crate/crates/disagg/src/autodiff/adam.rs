use ndarray::Array2;

use crate::error::{Error, Result};

/// Adaptive-moment optimizer state: per-parameter first/second moment
/// accumulators with bias correction. Updates are deterministic given the
/// state and gradients.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl AdamState {
    /// Defaults besides the learning rate: decay rates 0.9/0.999, ε = 1e-8.
    pub fn new(learning_rate: f64, param_shapes: &[(usize, usize)]) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: param_shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            v: param_shapes.iter().map(|&s| Array2::zeros(s)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of every parameter in place.
    ///
    /// A non-finite gradient aborts with the step index.
    pub fn step(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer has {} slots, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step;
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.dim() != g.dim() {
                return Err(Error::Shape(format!(
                    "optimizer step {t}: param {i} is ({}, {}), grad is ({}, {})",
                    p.dim().0,
                    p.dim().1,
                    g.dim().0,
                    g.dim().1
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for parameter {i} at optimizer step {t}"
                )));
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            m.zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            v.zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            ndarray::Zip::from(p)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    *p -= self.learning_rate * mhat / (vhat.sqrt() + self.epsilon);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut adam = AdamState::new(1e-3, &[(1, 2)]);
        let mut params = vec![array![[1.0, -2.0]]];
        adam.step(&mut params, &[Array2::zeros((1, 2))]).unwrap();
        assert_eq!(params[0], array![[1.0, -2.0]]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_about_the_learning_rate() {
        // Hand evaluation at t=1: mhat = g, vhat = g², update = lr·g/(|g|+ε).
        let lr = 1e-2;
        let mut adam = AdamState::new(lr, &[(1, 1)]);
        let mut params = vec![array![[0.0]]];
        adam.step(&mut params, &[array![[3.0]]]).unwrap();
        let expected = -lr * 3.0 / (3.0 + 1e-8);
        assert!((params[0][(0, 0)] - expected).abs() < 1e-15);
        assert!((params[0][(0, 0)].abs() - lr).abs() < 1e-8);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut adam = AdamState::new(1e-3, &[(2, 2)]);
            let mut params = vec![array![[1.0, 2.0], [3.0, 4.0]]];
            for k in 0..10 {
                let g = params[0].mapv(|v| (v * 0.7 + k as f64 * 0.01).sin());
                adam.step(&mut params, &[g]).unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn nan_gradient_fails_with_step_index() {
        let mut adam = AdamState::new(1e-3, &[(1, 1)]);
        let mut params = vec![array![[1.0]]];
        adam.step(&mut params, &[array![[1.0]]]).unwrap();
        let err = adam.step(&mut params, &[array![[f64::NAN]]]).unwrap_err();
        assert!(err.to_string().contains("step 2"), "{err}");
    }
}
