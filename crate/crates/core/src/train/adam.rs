use serde::{Deserialize, Serialize};

use super::TrainError;

pub const DEFAULT_LR: f64 = 1.6e-4;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias correction and a per-parameter learning-rate multiplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// One update of `params` with `grads`. `scale[i]` multiplies the learning
    /// rate of parameter `i`; `None` means 1 everywhere.
    pub fn step(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        scale: Option<&[f64]>,
    ) -> Result<(), TrainError> {
        if params.len() != self.m.len()
            || grads.len() != self.m.len()
            || scale.is_some_and(|s| s.len() != self.m.len())
        {
            return Err(TrainError::ShapeMismatch {
                expected: self.m.len(),
                found: if params.len() != self.m.len() {
                    params.len()
                } else {
                    grads.len()
                },
            });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let lr = self.lr * scale.map_or(1.0, |s| s[i]);
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_and_decays_moments() {
        let mut opt = Adam::new(2, 0.1);
        let mut p = vec![1.0, -2.0];
        opt.step(&mut p, &[0.5, -0.5], None).unwrap();
        let (m, v) = (opt.m.clone(), opt.v.clone());
        let after = p.clone();
        opt.step(&mut p, &[0.0, 0.0], None).unwrap();
        for i in 0..2 {
            assert_eq!(opt.m[i], 0.9 * m[i]);
            assert_eq!(opt.v[i], 0.999 * v[i]);
        }
        // Parameters still move from momentum; with zero moments they do not.
        let mut fresh = Adam::new(2, 0.1);
        let mut q = after.clone();
        fresh.step(&mut q, &[0.0, 0.0], None).unwrap();
        assert_eq!(q, after);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let mut opt = Adam::new(1, 1.6e-4);
        let mut p = vec![0.3];
        let g = 2.5;
        opt.step(&mut p, &[g], None).unwrap();
        // m̂ = g, v̂ = g², update = lr g / (|g| + eps).
        let expected = 0.3 - 1.6e-4 * g / (g.abs() + 1e-8);
        assert!((p[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn runs_are_deterministic_and_shapes_checked() {
        let run = || {
            let mut opt = Adam::new(3, 0.01);
            let mut p = vec![0.1, 0.2, 0.3];
            for k in 0..50 {
                let g: Vec<f64> = p.iter().map(|x| 2.0 * x + (k as f64).sin()).collect();
                opt.step(&mut p, &g, Some(&[1.0, 2.0, 0.5])).unwrap();
            }
            p
        };
        assert_eq!(
            run().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            run().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        let mut opt = Adam::new(2, 0.01);
        assert!(opt.step(&mut [0.0; 3], &[0.0; 3], None).is_err());
    }
}
