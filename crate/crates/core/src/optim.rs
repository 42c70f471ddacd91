//! Adam: gradient steps scaled by running first and second moment estimates.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    /// Decays 0.9 / 0.999 and epsilon 1e-8.
    pub fn new(n_params: usize, learning_rate: f64) -> Result<Self> {
        Self::with_moments(n_params, learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_moments(
        n_params: usize,
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Result<Self> {
        if !(learning_rate.is_finite() && learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {learning_rate}"
            )));
        }
        if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0) {
            return Err(Error::Config("Adam decays must lie in [0, 1) and epsilon > 0".into()));
        }
        Ok(Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Dimension {
                context: "optimizer state",
                expected: self.m.len(),
                got: params.len().min(grad.len()),
            });
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first update is lr * g / (|g| + eps).
        let mut opt = Adam::new(2, 0.1).unwrap();
        let mut p = [1.0, -1.0];
        opt.step(&mut p, &[3.0, -0.5]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-8);
        assert!((p[1] + 0.9).abs() < 1e-8);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut opt = Adam::new(1, 0.05).unwrap();
        let mut p = [4.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.5)];
            opt.step(&mut p, &g).unwrap();
        }
        assert!((p[0] - 1.5).abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_settings() {
        assert!(Adam::new(1, 0.0).is_err());
        assert!(Adam::with_moments(1, 1e-3, 1.0, 0.999, 1e-8).is_err());
        let mut opt = Adam::new(2, 1e-3).unwrap();
        assert!(opt.step(&mut [0.0], &[0.0]).is_err());
    }
}
